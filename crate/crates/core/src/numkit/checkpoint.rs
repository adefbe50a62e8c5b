//! Versioned JSON checkpoint: parameter tensors by name plus free-form metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamTape, Tensor2};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "skelreid-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub metadata: serde_json::Value,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(params: &ParamTape, metadata: serde_json::Value, optimizer: Option<AdamState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            metadata,
            params: params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_owned(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                })
                .collect(),
            optimizer,
        }
    }

    pub fn to_param_tape(&self) -> Result<ParamTape> {
        let mut tape = ParamTape::new();
        for p in &self.params {
            let t = Tensor2::from_vec(p.rows, p.cols, p.data.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", p.name)))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("parameter `{}` is not finite", p.name)));
            }
            tape.register(p.name.clone(), t)?;
        }
        Ok(tape)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format tag `{}` (expected `{CHECKPOINT_FORMAT}`)",
                path.display(),
                ck.format
            )));
        }
        Ok(ck)
    }
}
