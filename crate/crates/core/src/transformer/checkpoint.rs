use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::TransformerModel;
use super::tokenizer::Vocabulary;
use super::weights::BaseWeights;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "gpiot-model/1";

/// Self-describing JSON container for a base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format: String,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &TransformerModel) -> Self {
        ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            config: model.config,
            vocab: model.vocab.clone(),
            tensors: model.weights.to_map(),
        }
    }

    pub fn into_model(self) -> Result<TransformerModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "unsupported model checkpoint format {:?}",
                self.format
            )));
        }
        self.config.validate()?;
        let weights = BaseWeights::from_map(&self.config, self.tensors)?;
        TransformerModel::new(self.config, self.vocab, weights)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn save_model(model: &TransformerModel, path: &Path) -> Result<()> {
    let json = ModelCheckpoint::from_model(model).to_json()?;
    fs::write(path, json).map_err(Error::at_path(path))
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    let s = fs::read_to_string(path).map_err(Error::at_path(path))?;
    ModelCheckpoint::from_json(&s)?.into_model()
}
