//! Binary checkpoint format.
//!
//! Layout: magic `JVAE`, `u32` LE version, `u32` LE header length, a UTF-8
//! JSON header, then every tensor as contiguous little-endian `f32`. Tensor
//! offsets in the header are relative to the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LatentSpec, Model, ModelConfig};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::util::config_hash;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JVAE";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// Optimizer state and bookkeeping stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingState {
    pub iteration: u64,
    pub seed: u64,
    /// Free-form run description (dataset, objective, preset, ...).
    pub metadata: serde_json::Value,
    /// Additional named tensors, e.g. optimizer moments.
    pub extra: Vec<(String, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub state: TrainingState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    latent_spec: LatentSpec,
    temperature: f64,
    iteration: u64,
    seed: u64,
    config_hash: String,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<S: Scalar>(path: &Path, model: &Model<S>, state: &TrainingState) -> Result<()> {
    let weights: Vec<(String, Tensor<f32>)> = model.params().iter().map(|(n, t)| (n.clone(), t.cast())).collect();
    let all: Vec<&(String, Tensor<f32>)> = weights.iter().chain(&state.extra).collect();

    let mut offset = 0u64;
    let mut tensors = Vec::with_capacity(all.len());
    for (name, t) in &all {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.numel() as u64;
    }
    let config = model.config().clone();
    let header = Header {
        latent_spec: config.latent_spec.clone(),
        temperature: config.latent_spec.temperature,
        config_hash: config_hash(&config),
        config,
        iteration: state.iteration,
        seed: state.seed,
        metadata: state.metadata.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &all {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    // write-then-rename so readers never observe a partial file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(offset: usize, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| corrupt(bytes.len(), format!("file truncated inside preamble, expected at least {PREAMBLE} bytes")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&bytes)
}

pub(crate) fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt(0, "missing JVAE magic"));
    }
    let version = read_u32(bytes, 4)?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(4, format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(corrupt(
            bytes.len(),
            format!("header declares {header_len} bytes but only {} remain", bytes.len() - PREAMBLE),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
        .map_err(|e| corrupt(PREAMBLE, format!("invalid header: {e}")))?;
    header.config.validate().map_err(|e| corrupt(PREAMBLE, e.to_string()))?;
    if header.latent_spec != header.config.latent_spec {
        return Err(corrupt(PREAMBLE, "latent_spec disagrees with config"));
    }

    let data = &bytes[data_start..];
    let mut expected = 0u64;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let at = data_start + entry.offset as usize;
        if entry.offset != expected {
            return Err(corrupt(at, format!("tensor {} starts at {} but expected {expected}", entry.name, entry.offset)));
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset as usize + 4 * numel;
        if end > data.len() {
            return Err(corrupt(
                bytes.len(),
                format!(
                    "tensor {} needs bytes up to {} but file ends at {}",
                    entry.name,
                    data_start + end,
                    bytes.len()
                ),
            ));
        }
        let values: Vec<f32> = data[entry.offset as usize..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(corrupt(at + 4 * i, format!("non-finite value in tensor {}", entry.name)));
        }
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), values)?));
        expected = end as u64;
    }
    if (expected as usize) != data.len() {
        return Err(corrupt(
            data_start + expected as usize,
            format!("{} trailing bytes after last tensor", data.len() - expected as usize),
        ));
    }

    let n_params = super::param_specs(&header.config).len();
    if tensors.len() < n_params {
        return Err(corrupt(PREAMBLE, format!("expected {n_params} weight tensors, found {}", tensors.len())));
    }
    let extra = tensors.split_off(n_params);
    let model = Model::from_params(header.config, tensors).map_err(|e| corrupt(PREAMBLE, e.to_string()))?;
    Ok(Checkpoint {
        model,
        state: TrainingState {
            iteration: header.iteration,
            seed: header.seed,
            metadata: header.metadata,
            extra,
        },
    })
}
