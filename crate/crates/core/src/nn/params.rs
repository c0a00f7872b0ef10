use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::models::{Arch, ScaleConfig};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }
}

pub type ParamMap<S> = BTreeMap<String, Tensor<S>>;

/// Same keys, same shapes.
pub fn congruent<S, T>(a: &BTreeMap<String, Tensor<S>>, b: &BTreeMap<String, Tensor<T>>) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape == tb.shape)
}

/// Parameters of one network: trainable tensors plus normalization running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S = f32> {
    pub arch: Arch,
    pub scale: ScaleConfig,
    pub seed: u64,
    pub params: ParamMap<S>,
    pub buffers: ParamMap<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn num_trainable(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_congruent<T: Scalar>(&self, other: &ModelParams<T>) -> bool {
        self.arch == other.arch
            && self.scale == other.scale
            && congruent(&self.params, &other.params)
            && congruent(&self.buffers, &other.buffers)
    }

    /// `self <- src`, copying every tensor.
    pub fn assign(&mut self, src: &ModelParams<S>) -> Result<()> {
        if !self.is_congruent(src) {
            return Err(Error::Shape(format!(
                "cannot assign {} {:?} into {} {:?}",
                src.arch, src.scale, self.arch, self.scale
            )));
        }
        for (dst, s) in self.params.values_mut().zip(src.params.values()) {
            dst.data.copy_from_slice(&s.data);
        }
        for (dst, s) in self.buffers.values_mut().zip(src.buffers.values()) {
            dst.data.copy_from_slice(&s.data);
        }
        self.seed = src.seed;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let c = |m: &ParamMap<S>| m.iter().map(|(k, t)| (k.clone(), t.cast())).collect();
        ModelParams {
            arch: self.arch,
            scale: self.scale,
            seed: self.seed,
            params: c(&self.params),
            buffers: c(&self.buffers),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .values()
            .chain(self.buffers.values())
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over keys and the 64-bit image of every value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, t) in self.params.iter().chain(self.buffers.iter()) {
            h.update(k.as_bytes());
            for v in &t.data {
                h.update(v.f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Element-wise mean of the running statistics of `sources`, in order.
    pub fn average_buffers_from(&mut self, sources: &[&ModelParams<S>]) -> Result<()> {
        if sources.is_empty() {
            return Ok(());
        }
        if let Some(bad) = sources.iter().find(|s| !self.is_congruent(*s)) {
            return Err(Error::Shape(format!("incongruent source {}", bad.arch)));
        }
        let n = sources.len() as f64;
        for (key, dst) in self.buffers.iter_mut() {
            for (i, v) in dst.data.iter_mut().enumerate() {
                let sum: f64 = sources.iter().map(|s| s.buffers[key].data[i].f64()).sum();
                *v = S::of(sum / n);
            }
        }
        Ok(())
    }
}
