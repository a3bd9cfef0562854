//! Versioned JSON weight checkpoints.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format": "moeqa-checkpoint",
//!   "version": 1,
//!   "config_hash": "…",
//!   "seed": 17,
//!   "meta": { … free-form, e.g. model config and vocabulary … },
//!   "params": { "path.to.param": { "shape": [r, c], "data": [row-major f64 …] } }
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT: &str = "moeqa-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn new(params: &ParamStore, config_hash: &str, seed: u64, meta: serde_json::Value) -> Self {
        let params = params
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    ParamEntry {
                        shape: v.shape().to_vec(),
                        data: v.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash: config_hash.to_string(),
            seed,
            meta,
            params,
        }
    }

    pub fn to_params(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (k, e) in &self.params {
            store.insert(k.clone(), Tensor::new(e.shape.clone(), e.data.clone())?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some((name, _)) = self
            .params
            .iter()
            .find(|(_, e)| e.data.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric {
                op: "checkpoint save",
                detail: format!("parameter `{name}` holds a non-finite value"),
            });
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!(
                    "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                    ckpt.format, ckpt.version
                ),
            });
        }
        Ok(ckpt)
    }
}
