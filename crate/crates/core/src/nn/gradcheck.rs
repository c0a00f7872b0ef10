//! Central finite-difference check of reverse-mode gradients.
//!
//! ReLU masks are frozen at the unperturbed forward pass, so the numeric
//! derivative is taken on the same linear piece the analytic one sees. In
//! train mode the checked function includes the batch statistics of every
//! normalization layer, whose curvature makes the truncation error of a
//! coarse step visible on small gradients; in eval mode, with masks frozen,
//! the logits are linear in each single parameter.

use super::graph::{cross_entropy, Act, Graph, Mode};
use super::params::ModelParams;
use super::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradDiscrepancy {
    pub key: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries above the tolerance.
    pub failures: Vec<GradDiscrepancy>,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps gradients that are
/// zero up to rounding from producing huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn check_gradients(
    graph: &Graph,
    model: &ModelParams<f64>,
    batch: &Batch<f64>,
    mode: Mode,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let input = Act::from_batch(batch);
    let trace = graph.forward(model, input.clone(), mode, None, None)?;
    let (_, d_logits) = cross_entropy(&trace.logits().data, &batch.targets);
    let grads = graph.backward(model, &trace, d_logits)?;
    let masks = trace.relu_masks.clone();

    let loss_at = |m: &ModelParams<f64>| -> Result<f64> {
        let t = graph.forward(m, input.clone(), mode, Some(&masks), None)?;
        Ok(cross_entropy(&t.logits().data, &batch.targets).0)
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    let mut probe = model.clone();
    for (key, tensor) in &model.params {
        let analytic = grads
            .get(key)
            .ok_or_else(|| Error::Shape(format!("no gradient for {key}")))?;
        for i in 0..tensor.len() {
            let orig = tensor.data[i];
            probe.params.get_mut(key).expect("cloned").data[i] = orig + step;
            let up = loss_at(&probe)?;
            probe.params.get_mut(key).expect("cloned").data[i] = orig - step;
            let down = loss_at(&probe)?;
            probe.params.get_mut(key).expect("cloned").data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data[i];
            let rel = relative_error(a, numeric, 1e-6);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tol {
                report.failures.push(GradDiscrepancy {
                    key: key.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
