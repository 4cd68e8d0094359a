//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "wlgnn-checkpoint",
//!   "version": 1,
//!   "meta": { ... free-form ... },
//!   "params": { "<name>": { "shape": [..], "values": [..row-major..] } }
//! }
//! ```
//!
//! Floats are written with serde_json's shortest round-trip representation,
//! so loading reproduces the saved values bit for bit.

use super::{Params, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "wlgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &Params, meta: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta,
            params: params
                .tensors
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape().to_vec(),
                            values: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<Params> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::input(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::input(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut p = Params::default();
        for (k, s) in &self.params {
            p.insert(k.clone(), Tensor::new(s.shape.clone(), s.values.clone())?);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
