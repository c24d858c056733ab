//! Versioned JSON checkpoints: named parameter arrays plus a config echo.
//! f64 values round-trip exactly through the text encoding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SconeError};
use crate::nn::Params;

use super::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub params: BTreeMap<String, ParamArray>,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, model: &mut dyn Params) -> Self {
        let mut params = BTreeMap::new();
        model.visit("", &mut |p| {
            params.insert(
                p.name.clone(),
                ParamArray {
                    shape: p.value.shape().to_vec(),
                    data: p.value.iter().copied().collect(),
                },
            );
        });
        Self { version: CHECKPOINT_VERSION, config: config.clone(), params }
    }

    /// Write the captured arrays back into a freshly built model. Every model
    /// parameter must be present with a matching shape; extra checkpoint
    /// entries (e.g. a discarded projection head) are ignored.
    pub fn restore(&self, model: &mut dyn Params) -> Result<()> {
        let mut missing = Vec::new();
        model.visit("", &mut |mut p| {
            match self.params.get(&p.name) {
                Some(stored) if stored.shape == p.value.shape() => {
                    for (v, &s) in p.value.iter_mut().zip(stored.data.iter()) {
                        *v = s;
                    }
                }
                Some(stored) => missing.push(format!(
                    "{}: shape {:?} != {:?}",
                    p.name,
                    stored.shape,
                    p.value.shape()
                )),
                None => missing.push(format!("{}: absent", p.name)),
            }
        });
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SconeError::VocabMismatch(missing.join("; ")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(SconeError::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(SconeError::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        Ok(checkpoint)
    }

    /// Drop parameters by name prefix (used to discard pretraining-only
    /// heads before saving).
    pub fn strip_prefix(&mut self, prefix: &str) {
        self.params.retain(|name, _| !name.starts_with(prefix));
    }
}
