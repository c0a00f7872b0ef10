//! Parameter files: an 8-byte little-endian header length, a JSON header, then
//! every tensor as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::models::{param_specs, Arch, ScaleConfig};
use super::params::{ModelParams, Tensor};
use crate::error::{Error, Result};
use crate::market_data::write_atomic;

const PARAMS_FORMAT: &str = "metatrend-params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub key: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsHeader {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub scale: ScaleConfig,
    pub seed: u64,
    pub feature_checksum: String,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_params(
    model: &ModelParams<f32>,
    path: impl AsRef<Path>,
    config_hash: &str,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (trainable, map) in [(true, &model.params), (false, &model.buffers)] {
        for (k, t) in map {
            tensors.push(TensorEntry {
                key: k.clone(),
                trainable,
                shape: t.shape.clone(),
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&ParamsHeader {
        format: PARAMS_FORMAT.into(),
        version: 1,
        arch: model.arch,
        scale: model.scale,
        seed: model.seed,
        feature_checksum: crate::indicators::feature_checksum(),
        config_hash: config_hash.to_string(),
        tensors,
    })?;
    let mut bytes = Vec::with_capacity(8 + header.len() + blob.len());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&blob);
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(ParamsHeader, ModelParams<f32>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 {
        return Err(corrupt("truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: ParamsHeader =
        serde_json::from_slice(body).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != PARAMS_FORMAT {
        return Err(corrupt(format!("unexpected format {:?}", header.format)));
    }
    if header.feature_checksum != crate::indicators::feature_checksum() {
        return Err(corrupt("feature layout checksum mismatch".into()));
    }
    let specs = param_specs(header.arch, &header.scale)?;
    let mut blob = &bytes[8 + hlen..];
    let mut model = ModelParams {
        arch: header.arch,
        scale: header.scale,
        seed: header.seed,
        params: Default::default(),
        buffers: Default::default(),
    };
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if blob.len() < n * 4 {
            return Err(corrupt(format!("blob ends inside {}", entry.key)));
        }
        let data: Vec<f32> = blob[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("non-finite value in {}", entry.key)));
        }
        blob = &blob[n * 4..];
        let t = Tensor {
            shape: entry.shape.clone(),
            data,
        };
        let map = if entry.trainable {
            &mut model.params
        } else {
            &mut model.buffers
        };
        map.insert(entry.key.clone(), t);
    }
    if !blob.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", blob.len())));
    }
    let expected: Vec<(&str, &[usize], bool)> = specs
        .iter()
        .map(|s| (s.key.as_str(), s.shape.as_slice(), s.trainable))
        .collect();
    let found = model.params.len() + model.buffers.len();
    let consistent = found == expected.len()
        && expected.iter().all(|(k, shape, trainable)| {
            let map = if *trainable {
                &model.params
            } else {
                &model.buffers
            };
            map.get(*k).is_some_and(|t| t.shape == *shape)
        });
    if !consistent {
        return Err(corrupt(format!(
            "tensors do not match the {} {:?} layout",
            header.arch, header.scale
        )));
    }
    Ok((header, model))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    read_params(path).map(|(_, m)| m)
}

pub fn load_params_expect(path: impl AsRef<Path>, arch: Arch) -> Result<ModelParams<f32>> {
    let model = load_params(path)?;
    if model.arch != arch {
        return Err(Error::ArchMismatch {
            expected: arch.to_string(),
            found: model.arch.to_string(),
        });
    }
    Ok(model)
}
