//! Training hyperparameters shared by meta-training and fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Learning rates and schedule lengths. Every optimizer is Adam with
/// cosine annealing over its own horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Inner-loop (task-learner) rate.
    pub alpha: f64,
    /// Meta-learner rate.
    pub beta: f64,
    /// Fine-tuning rate.
    pub gamma: f64,
    pub meta_steps: usize,
    pub inner_epochs: usize,
    pub finetune_epochs: usize,
    pub inner_batch: usize,
    pub finetune_batch: usize,
    /// Support examples drawn per class for each episode.
    pub per_class: usize,
    pub adam: AdamConfig,
    /// Root of every training random stream. Not read from config files; the
    /// run configuration owns the seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-4,
            gamma: 1e-4,
            meta_steps: 100,
            inner_epochs: 5,
            finetune_epochs: 50,
            inner_batch: 16,
            finetune_batch: 32,
            per_class: 20,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a positive rate, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("inner_batch", self.inner_batch),
            ("finetune_batch", self.finetune_batch),
            ("per_class", self.per_class),
            ("inner_epochs", self.inner_epochs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config(
                "adam moments must lie in [0, 1) and eps be positive".into(),
            ));
        }
        Ok(())
    }

    /// Support size per episode when every class is fully stocked.
    pub fn support_size(&self) -> usize {
        self.per_class * crate::nn::NUM_CLASSES
    }
}
