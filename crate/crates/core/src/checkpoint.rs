//! Self-describing model checkpoints.
//!
//! A checkpoint is one JSON document holding the model config, the
//! vocabulary sizes, and every named parameter array with its shape.
//! Serialization is canonical (fixed field order, shortest-round-trip
//! floats), so save -> load -> save is byte-stable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{ModelConfig, MScanModel, VocabSizes};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamBlob {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: VocabSizes,
    params: Vec<ParamBlob>,
}

impl Checkpoint {
    pub fn from_model(model: &MScanModel) -> Self {
        let params = model
            .params
            .iter()
            .into_iter()
            .map(|p| ParamBlob {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            config: model.config.clone(),
            vocab: model.vocab,
            params,
        }
    }

    pub fn into_model(self) -> Result<MScanModel, CheckpointError> {
        let mut model = MScanModel::new(self.config, self.vocab)
            .map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
        for blob in self.params {
            let slot = model
                .params
                .iter_mut()
                .into_iter()
                .find(|p| p.name == blob.name)
                .ok_or_else(|| {
                    CheckpointError::Incompatible(format!("unknown parameter `{}`", blob.name))
                })?;
            if slot.value.shape() != blob.shape.as_slice() {
                return Err(CheckpointError::Incompatible(format!(
                    "parameter `{}`: shape {:?} does not match {:?}",
                    blob.name,
                    blob.shape,
                    slot.value.shape()
                )));
            }
            slot.value = Tensor::new(blob.shape, blob.data)
                .map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
        }
        Ok(model)
    }
}

pub fn save_model(model: &MScanModel, path: &Path) -> Result<(), CheckpointError> {
    let mut text = serde_json::to_string(&Checkpoint::from_model(model))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MScanModel, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.into_model()
}
