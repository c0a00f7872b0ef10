//! Mini-batch Adam training loop shared by inner adaptation and fine-tuning.

use std::ops::Range;

use rand::seq::SliceRandom;

use crate::error::Result;
use crate::nn::{cosine_lr, loss_and_grads, Adam, AdamConfig, Batch, ModelParams};
use crate::rng;
use crate::tensor::LabeledExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine annealing from the base rate over the configured epochs.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Root of the per-epoch shuffle streams.
    pub seed: u64,
}

/// Contiguous batch ranges over `n` items. A trailing batch of one is folded
/// into its predecessor so batch statistics never come from a single example.
pub fn batch_ranges(n: usize, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

/// Shuffled order of `n` items for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag("shuffle"), epoch as u64]));
    order
}

/// Trains `model` in place and returns the mean training loss of each epoch.
/// Normalization running statistics follow every batch.
pub fn fit(
    model: &mut ModelParams<f32>,
    examples: &[&LabeledExample],
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(&model.params, opts.adam);
    let mut losses = Vec::with_capacity(opts.epochs);
    if examples.is_empty() {
        return Ok(losses);
    }
    for epoch in 0..opts.epochs {
        let lr = match opts.schedule {
            LrSchedule::Constant => opts.base_lr,
            LrSchedule::Cosine => cosine_lr(epoch, opts.epochs, opts.base_lr),
        };
        let order = epoch_order(examples.len(), opts.seed, epoch);
        let mut total = 0.0;
        for r in batch_ranges(order.len(), opts.batch_size) {
            let batch = Batch::from_examples(order[r.clone()].iter().map(|&i| examples[i]))?;
            let lg = loss_and_grads(model, &batch)?;
            model.apply_running(lg.running);
            adam.step(&mut model.params, &lg.grads, lr)?;
            total += lg.loss * r.len() as f64;
        }
        losses.push(total / examples.len() as f64);
    }
    Ok(losses)
}
