use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adapters::{ForwardMode, PectAdapters, PectConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::transformer::ModelConfig;

pub const ADAPTER_FORMAT: &str = "gpiot-adapters/1";

/// JSON container for adapter and projection tensors only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterCheckpoint {
    pub format: String,
    pub rank: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub p_ff: usize,
    pub dropout: f64,
    pub scale: f64,
    pub mode: ForwardMode,
    pub tensors: BTreeMap<String, Tensor>,
}

impl AdapterCheckpoint {
    pub fn new(adapters: &PectAdapters, mode: ForwardMode) -> Self {
        let c = adapters.config;
        AdapterCheckpoint {
            format: ADAPTER_FORMAT.into(),
            rank: c.rank,
            lambda: c.lambda,
            gamma: c.gamma,
            p_ff: c.p_ff,
            dropout: c.dropout,
            scale: c.scale,
            mode,
            tensors: adapters.to_map(),
        }
    }

    pub fn config(&self) -> PectConfig {
        PectConfig {
            rank: self.rank,
            lambda: self.lambda,
            gamma: self.gamma,
            p_ff: self.p_ff,
            dropout: self.dropout,
            scale: self.scale,
        }
    }

    pub fn into_adapters(self, model: &ModelConfig) -> Result<PectAdapters> {
        if self.format != ADAPTER_FORMAT {
            return Err(Error::Config(format!(
                "unsupported adapter checkpoint format {:?}",
                self.format
            )));
        }
        let cfg = self.config();
        PectAdapters::from_map(model, cfg, self.tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn save_adapters(adapters: &PectAdapters, mode: ForwardMode, path: &Path) -> Result<()> {
    let json = AdapterCheckpoint::new(adapters, mode).to_json()?;
    fs::write(path, json).map_err(Error::at_path(path))
}

/// Loads adapters for a base model of shape `model`, returning the stored
/// forward mode alongside.
pub fn load_adapters(path: &Path, model: &ModelConfig) -> Result<(PectAdapters, ForwardMode)> {
    let s = fs::read_to_string(path).map_err(Error::at_path(path))?;
    let ck: AdapterCheckpoint = serde_json::from_str(&s)?;
    let mode = ck.mode;
    Ok((ck.into_adapters(model)?, mode))
}
