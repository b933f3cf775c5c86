//! Model checkpoints: one line of JSON header, then one `CCVF` blob per
//! tensor in the order the header lists them.
//!
//! Tensors are stored as `f32`, so loading a checkpoint written from
//! freshly trained `f64` weights rounds them; a loaded checkpoint re-saves
//! byte-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{decode_features_prefix, encode_features};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{ModelConfig, ModelParams, Weights};
use crate::ranking::Hyperparams;

const FORMAT: &str = "conf-rerank-checkpoint";
const VERSION: u32 = 1;
const RUNNING_MEAN: &str = "bn.running_mean";
const RUNNING_VAR: &str = "bn.running_var";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: ModelConfig,
    hyperparams: Hyperparams,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub hyperparams: Hyperparams,
}

fn tensors(params: &ModelParams) -> Vec<(String, Matrix)> {
    let mut out: Vec<(String, Matrix)> = params
        .weights
        .segments()
        .into_iter()
        .map(|s| {
            let m = Matrix::from_vec(s.shape.0, s.shape.1, s.data.to_vec()).expect("segment shape");
            (s.name.to_string(), m)
        })
        .collect();
    for (name, v) in [(RUNNING_MEAN, &params.running_mean), (RUNNING_VAR, &params.running_var)] {
        out.push((name.to_string(), Matrix::from_vec(1, v.len(), v.clone()).expect("vector shape")));
    }
    out
}

pub fn encode_checkpoint(params: &ModelParams, hyperparams: &Hyperparams) -> Result<Vec<u8>> {
    let tensors = tensors(params);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        model: params.config.clone(),
        hyperparams: hyperparams.clone(),
        seed: hyperparams.seed,
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, m) in &tensors {
        out.extend(encode_features(m)?);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?} version {}",
            header.format, header.version
        )));
    }

    let mut params = ModelParams {
        weights: Weights::zeros(&header.model),
        running_mean: vec![0.0; header.model.hidden_dim],
        running_var: vec![0.0; header.model.hidden_dim],
        config: header.model.clone(),
    };
    let expected: Vec<(String, (usize, usize))> = params
        .weights
        .segments()
        .iter()
        .map(|s| (s.name.to_string(), s.shape))
        .chain([RUNNING_MEAN, RUNNING_VAR].map(|n| (n.to_string(), (1, header.model.hidden_dim))))
        .collect();
    let listed: Vec<(String, (usize, usize))> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), (t.rows, t.cols)))
        .collect();
    if listed != expected {
        return Err(Error::Checkpoint("tensor list does not match the model configuration".into()));
    }

    let mut at = newline + 1;
    let mut blobs = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let (m, used) = decode_features_prefix(&bytes[at..])?;
        if (m.rows(), m.cols()) != *shape {
            return Err(Error::Checkpoint(format!("tensor {name} has the wrong shape")));
        }
        blobs.push(m);
        at += used;
    }
    if at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - at)));
    }

    let n_weights = blobs.len() - 2;
    for (seg, m) in params.weights.segments_mut().into_iter().zip(&blobs[..n_weights]) {
        seg.data.copy_from_slice(m.as_slice());
    }
    params.running_mean = blobs[n_weights].as_slice().to_vec();
    params.running_var = blobs[n_weights + 1].as_slice().to_vec();
    Ok(Checkpoint {
        params,
        hyperparams: header.hyperparams,
    })
}

pub fn save_checkpoint(params: &ModelParams, hyperparams: &Hyperparams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, hyperparams)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
