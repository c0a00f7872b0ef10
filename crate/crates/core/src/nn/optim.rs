//! Adam with bias correction, and the cosine-annealing schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{congruent, ParamMap};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state; moments are kept in f64 whatever the parameter type.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl Adam {
    pub fn new<S: Scalar>(params: &ParamMap<S>, cfg: AdamConfig) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step<S: Scalar>(
        &mut self,
        params: &mut ParamMap<S>,
        grads: &ParamMap<S>,
        lr: f64,
    ) -> Result<()> {
        if !congruent(params, grads) {
            return Err(Error::Shape(
                "gradients are not congruent with parameters".into(),
            ));
        }
        if params.len() != self.m.len()
            || params
                .iter()
                .any(|(k, t)| self.m.get(k).map(Vec::len) != Some(t.len()))
        {
            return Err(Error::Shape(
                "optimizer state is not congruent with parameters".into(),
            ));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (key, p) in params.iter_mut() {
            let g = &grads[key];
            let m = self.m.get_mut(key).expect("congruent");
            let v = self.v.get_mut(key).expect("congruent");
            for i in 0..p.data.len() {
                let gi = g.data[i].f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] = S::of(p.data[i].f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

/// `base_lr * (1 + cos(pi * step / total)) / 2`, clamped at zero.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    (base_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0).max(0.0)
}
