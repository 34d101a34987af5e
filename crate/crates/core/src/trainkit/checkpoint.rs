//! Versioned JSON checkpoints.
//!
//! Parameters are stored by name with their shape and the row-major
//! little-endian `f64` bytes in standard base64, so a round trip is exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::Vocab;
use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::model::{copy_params, MultiFormatModel};

use super::config::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    /// Epoch (1-based) the parameters come from; 0 before any training.
    pub epoch: usize,
    /// Mean dev Arg-C F1 at that epoch, if dev data was available.
    pub dev_arg_c: Option<f64>,
    pub params: Vec<TensorRecord>,
}

fn encode(values: &Array2<f64>) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(record: &TensorRecord) -> Result<Array2<f64>> {
    let bytes = STANDARD
        .decode(&record.data)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", record.name)))?;
    let [rows, cols] = record.shape;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes for shape {rows}×{cols}",
            record.name,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", record.name)))
}

impl Checkpoint {
    pub fn from_model(
        model: &MultiFormatModel,
        config: &TrainConfig,
        epoch: usize,
        dev_arg_c: Option<f64>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            vocab: model.vocab().tokens().to_vec(),
            epoch,
            dev_arg_c,
            params: model
                .params()
                .iter()
                .map(|(_, name, v)| TensorRecord {
                    name: name.to_string(),
                    shape: [v.nrows(), v.ncols()],
                    data: encode(v),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<MultiFormatModel> {
        let vocab = Vocab::from_tokens(self.vocab.clone());
        let mut model = MultiFormatModel::new(self.config.model.clone(), vocab, self.config.seed)?;
        let mut stored = ParamStore::new();
        for r in &self.params {
            stored.add(r.name.clone(), decode(r)?);
        }
        if stored.len() != model.params().len() {
            return Err(Error::Checkpoint(format!(
                "{} stored tensors for a model with {}",
                stored.len(),
                model.params().len()
            )));
        }
        copy_params(model.params_mut(), &stored)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing version field".into())),
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
