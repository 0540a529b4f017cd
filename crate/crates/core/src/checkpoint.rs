//! JSON checkpoints: named tensors with shapes plus the model configuration.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{Attention, ModelConfig, ModelParams};
use crate::autodiff::Matrix;
use crate::events::MarkSpace;

pub const FORMAT: &str = "dapp-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format {0:?}")]
    Format(String),
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    marks: usize,
    attention: Attention,
    seed: u64,
    tensors: Vec<NamedTensor>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Trained parameters together with how they should be evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub attention: Attention,
    pub seed: u64,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn write(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            config: self.params.config.clone(),
            marks: self.params.mark_space.size(),
            attention: self.attention,
            seed: self.seed,
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    shape: [m.rows(), m.cols()],
                    data: m.as_slice().to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_writer(&mut *w, &file)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self, CheckpointError> {
        let file: CheckpointFile = serde_json::from_reader(r)?;
        if file.format != FORMAT {
            return Err(CheckpointError::Format(file.format));
        }
        let mut params = ModelParams::zeros(file.config, MarkSpace::new(file.marks));
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.into_iter().zip(params.tensors_mut()) {
            let t = file
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            let found = (t.shape[0], t.shape[1]);
            if found != slot.shape() || t.data.len() != slot.len() {
                return Err(CheckpointError::Shape {
                    name,
                    expected: slot.shape(),
                    found,
                });
            }
            *slot = Matrix::from_vec(found.0, found.1, t.data.clone());
        }
        Ok(Self {
            params,
            attention: file.attention,
            seed: file.seed,
            metadata: file.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
