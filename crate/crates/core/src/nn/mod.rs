//! Convolutional time-series classifiers with hand-written reverse-mode
//! gradients.
//!
//! A network is a static [`graph::Graph`] of layer ops over numbered
//! activation slots. [`models`] assembles the FCN, ResNet and TCN graphs;
//! parameters live in [`ModelParams`], keyed by stable layer names. All
//! numeric code is generic over [`Scalar`] so the same graph runs in `f32`
//! for training and in `f64` for finite-difference checks.

pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod models;
pub mod optim;
pub mod params;

use std::fmt::{Debug, Display};

pub use graph::{forward, loss_and_grads, softmax, Forward, LossAndGrads, Mode};
pub use io::{load_params, load_params_expect, read_params, save_params};
pub use models::{build_model, graph_for, param_specs, receptive_field, Arch, ScaleConfig};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use params::{ModelParams, ParamMap, Tensor};

use crate::error::{Error, Result};
use crate::indicators::NUM_FEATURES;
use crate::tensor::{LabeledExample, WINDOW};

pub const NUM_CLASSES: usize = 4;

pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Default + Send + Sync + Debug + Display + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Inputs `[example][day][feature]` with ordinal class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub inputs: Vec<S>,
    pub targets: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn new(inputs: Vec<S>, targets: Vec<usize>) -> Result<Self> {
        let per = WINDOW * NUM_FEATURES;
        if targets.is_empty() {
            return Err(Error::Shape("batch must hold at least one example".into()));
        }
        if inputs.len() != targets.len() * per {
            return Err(Error::Shape(format!(
                "batch of {} targets needs {} input cells, got {}",
                targets.len(),
                targets.len() * per,
                inputs.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= NUM_CLASSES) {
            return Err(Error::Shape(format!("target {t} out of range")));
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_examples<'a>(
        examples: impl IntoIterator<Item = &'a LabeledExample>,
    ) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for e in examples {
            inputs.extend(e.tensor.values.iter().map(|&v| S::of(v)));
            targets.push(e.label.ordinal());
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Repeats every example `times` times in place.
    pub fn repeated(&self, times: usize) -> Self {
        let per = WINDOW * NUM_FEATURES;
        let mut inputs = Vec::with_capacity(self.inputs.len() * times);
        let mut targets = Vec::with_capacity(self.targets.len() * times);
        for (i, &t) in self.targets.iter().enumerate() {
            for _ in 0..times {
                inputs.extend_from_slice(&self.inputs[i * per..(i + 1) * per]);
                targets.push(t);
            }
        }
        Self { inputs, targets }
    }
}
