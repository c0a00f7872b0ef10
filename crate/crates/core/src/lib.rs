//! Short-term stock trend prediction with meta-learned convolutional
//! classifiers.
//!
//! The pipeline runs, in order: [`market_data`] ingestion and calendar
//! alignment, slope-detection [`labeling`], technical [`indicators`],
//! windowed input [`tensor`]s, the [`nn`] networks, episodic [`meta`]
//! pre-training on the shared [`train`] loop, walk-forward [`finetune`]
//! evaluation, classification [`metrics`] and a signal-driven [`backtest`].
//! [`pipeline`] strings the data steps together for a whole universe.

pub mod backtest;
pub mod config;
pub mod error;
pub mod finetune;
pub mod indicators;
pub mod labeling;
pub mod market_data;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use labeling::TrendLabel;
