//! Episodic meta-training of a shared initialization across per-stock tasks.
//!
//! Each outer step draws a class-balanced support set per stock, adapts a
//! private copy of the meta-learner on it, sums the adapted copies' query
//! losses, and moves the meta-learner by one Adam step along the summed
//! query gradients (first-order: the adapted parameters are not
//! differentiated through the inner loop).

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::labeling::TrendLabel;
use crate::nn::{cosine_lr, loss_and_grads, Adam, Batch, ModelParams, ParamMap, Tensor};
use crate::par;
use crate::rng;
use crate::tensor::{LabeledDataset, LabeledExample};
use crate::train::{fit, FitOptions, LrSchedule};

/// One stock's task: a pool to draw support sets from and its query month.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub stock_id: String,
    pub support_pool: LabeledDataset,
    pub query: LabeledDataset,
}

impl TaskData {
    /// Support and query must not share target dates.
    pub fn new(
        stock_id: impl Into<String>,
        support_pool: LabeledDataset,
        query: LabeledDataset,
    ) -> Result<Self> {
        let stock_id = stock_id.into();
        let query_dates: std::collections::BTreeSet<NaiveDate> = query
            .examples
            .iter()
            .map(|e| e.tensor.target_date)
            .collect();
        if support_pool
            .examples
            .iter()
            .any(|e| query_dates.contains(&e.tensor.target_date))
        {
            return Err(Error::Invalid(format!(
                "{stock_id}: support and query share target dates"
            )));
        }
        Ok(Self {
            stock_id,
            support_pool,
            query,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub stock_id: String,
    pub support: LabeledDataset,
    pub query: LabeledDataset,
}

/// Up to `per_class` examples of each class, drawn uniformly without
/// replacement. Output is grouped by class and keeps dataset order within
/// a class.
pub fn sample_support<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    per_class: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("support pool has no examples".into()));
    }
    let mut picked = Vec::new();
    for label in TrendLabel::ALL {
        let idx: Vec<usize> = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < per_class {
            log::warn!(
                "support pool has {} {label} examples, wanted {per_class}",
                idx.len()
            );
        }
        let take = per_class.min(idx.len());
        let mut chosen: Vec<usize> = sample(rng, idx.len(), take)
            .into_iter()
            .map(|j| idx[j])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen.into_iter().map(|i| dataset.examples[i].clone()));
    }
    Ok(LabeledDataset::new(picked, dataset.date_range))
}

/// Adapts a copy of `phi` on the support set; `phi` itself is untouched.
pub fn inner_adapt(
    phi: &ModelParams<f32>,
    support: &LabeledDataset,
    alpha: f64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams<f32>> {
    if support.is_empty() {
        return Err(Error::EmptyDataset("support set is empty".into()));
    }
    let mut theta = phi.clone();
    let examples: Vec<&LabeledExample> = support.examples.iter().collect();
    fit(
        &mut theta,
        &examples,
        &FitOptions {
            epochs: cfg.inner_epochs,
            batch_size: cfg.inner_batch,
            base_lr: alpha,
            schedule: LrSchedule::Constant,
            adam: cfg.adam,
            seed,
        },
    )?;
    Ok(theta)
}

#[derive(Debug, Clone)]
pub struct MetaLoss {
    /// Sum of per-stock mean query losses.
    pub total: f64,
    pub per_stock: Vec<(String, f64)>,
    /// Sum of query gradients at each adapted model.
    pub grads: ParamMap<f32>,
}

/// Query losses and gradients of adapted models, summed in stock-id order.
/// Stocks with an empty query set are skipped.
pub fn accumulate_meta_loss(
    thetas: &[(String, ModelParams<f32>)],
    queries: &BTreeMap<String, LabeledDataset>,
) -> Result<MetaLoss> {
    let mut order: Vec<&(String, ModelParams<f32>)> = thetas.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let evals = par::map(
        &order,
        |(id, theta)| -> Result<Option<(f64, ParamMap<f32>)>> {
            let Some(q) = queries.get(id) else {
                return Err(Error::Invalid(format!("no query set for {id}")));
            };
            if q.is_empty() {
                log::warn!("{id}: empty query set, left out of the meta loss");
                return Ok(None);
            }
            let lg = loss_and_grads(theta, &Batch::from_examples(&q.examples)?)?;
            Ok(Some((lg.loss, lg.grads)))
        },
    );
    let first = thetas
        .first()
        .ok_or_else(|| Error::EmptyDataset("no adapted models".into()))?;
    let mut acc: BTreeMap<String, Vec<f64>> = first
        .1
        .params
        .iter()
        .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
        .collect();
    let mut total = 0.0;
    let mut per_stock = Vec::new();
    for ((id, _), ev) in order.iter().zip(evals) {
        let Some((loss, grads)) = ev? else { continue };
        total += loss;
        per_stock.push((id.clone(), loss));
        for (k, g) in grads {
            let a = acc
                .get_mut(&k)
                .ok_or_else(|| Error::Shape(format!("unexpected gradient {k}")))?;
            a.iter_mut()
                .zip(&g.data)
                .for_each(|(x, y)| *x += f64::from(*y));
        }
    }
    if per_stock.is_empty() {
        return Err(Error::EmptyDataset("every query set is empty".into()));
    }
    let grads = first
        .1
        .params
        .iter()
        .map(|(k, t)| {
            let data = acc[k].iter().map(|&v| v as f32).collect();
            (
                k.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            )
        })
        .collect();
    Ok(MetaLoss {
        total,
        per_stock,
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaRunState {
    pub phi: ModelParams<f32>,
    pub optimizer: Adam,
    pub step: usize,
    pub seed: u64,
    pub log: Vec<MetaLogEntry>,
}

/// Runs `cfg.meta_steps` outer iterations from `phi`.
pub fn meta_train(
    phi: ModelParams<f32>,
    tasks: &[TaskData],
    cfg: &TrainConfig,
) -> Result<MetaRunState> {
    cfg.validate()?;
    let mut tasks: Vec<&TaskData> = tasks
        .iter()
        .filter(|t| !t.support_pool.is_empty() && !t.query.is_empty())
        .collect();
    tasks.sort_by(|a, b| a.stock_id.cmp(&b.stock_id));
    if tasks.is_empty() {
        return Err(Error::EmptyDataset(
            "no stock has both support and query examples".into(),
        ));
    }
    let queries: BTreeMap<String, LabeledDataset> = tasks
        .iter()
        .map(|t| (t.stock_id.clone(), t.query.clone()))
        .collect();
    let mut state = MetaRunState {
        optimizer: Adam::new(&phi.params, cfg.adam),
        phi,
        step: 0,
        seed: cfg.seed,
        log: Vec::new(),
    };
    for step in 0..cfg.meta_steps {
        let lr = cosine_lr(step, cfg.meta_steps, cfg.beta);
        let phi_ref = &state.phi;
        let adapted = par::map(&tasks, |task| -> Result<(String, ModelParams<f32>)> {
            let stock = rng::tag(&task.stock_id);
            let mut srng = rng::stream(cfg.seed, &[rng::tag("support"), step as u64, stock]);
            let support = sample_support(&task.support_pool, cfg.per_class, &mut srng)?;
            let inner_seed = rng::derive_seed(cfg.seed, &[rng::tag("inner"), step as u64, stock]);
            let theta = inner_adapt(phi_ref, &support, cfg.alpha, cfg, inner_seed)?;
            Ok((task.stock_id.clone(), theta))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Divergence(m) => Error::Divergence(format!("meta step {step}, inner loop: {m}")),
            other => other,
        })?;
        let meta = accumulate_meta_loss(&adapted, &queries)?;
        if !meta.total.is_finite() {
            return Err(Error::Divergence(format!(
                "meta step {step}: L_phi = {}",
                meta.total
            )));
        }
        state
            .optimizer
            .step(&mut state.phi.params, &meta.grads, lr)?;
        let thetas: Vec<&ModelParams<f32>> = adapted.iter().map(|(_, t)| t).collect();
        state.phi.average_buffers_from(&thetas)?;
        if !state.phi.is_finite() {
            return Err(Error::Divergence(format!(
                "meta step {step}: non-finite parameters"
            )));
        }
        state.log.push(MetaLogEntry {
            step,
            lr,
            loss: meta.total,
        });
        state.step = step + 1;
        log::debug!("meta step {step}: lr {lr:.3e}, L_phi {:.6}", meta.total);
    }
    Ok(state)
}

pub fn write_loss_log(
    path: &std::path::Path,
    log: &[MetaLogEntry],
    config_hash: &str,
) -> Result<()> {
    let mut out = format!(
        "{}{config_hash}\nstep,lr,loss\n",
        crate::finetune::CONFIG_HASH_PREFIX
    );
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.step, e.lr, e.loss));
    }
    crate::market_data::write_atomic(path, out.as_bytes())
}
