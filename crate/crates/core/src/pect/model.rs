use std::sync::Arc;

use super::adapters::{ForwardMode, PathId, PectAdapters};
use super::forward::{pect_model_forward, PectVars};
use super::lora::ForwardContext;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::transformer::model::ModelVars;
use crate::transformer::{NextTokenModel, TransformerModel};

/// Frozen base model plus its adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct PectModel {
    pub base: TransformerModel,
    pub adapters: PectAdapters,
    training: bool,
}

impl PectModel {
    pub fn new(base: TransformerModel, adapters: PectAdapters) -> Result<Self> {
        adapters.config.validate(&base.config)?;
        if adapters.n_layers() != base.config.n_layers {
            return Err(Error::Shape(format!(
                "adapters cover {} blocks, model has {}",
                adapters.n_layers(),
                base.config.n_layers
            )));
        }
        // Shapes of every tensor are checked by rebuilding from the map.
        PectAdapters::from_map(&base.config, adapters.config, adapters.to_map())?;
        Ok(PectModel {
            base,
            adapters,
            training: false,
        })
    }

    pub fn train(&mut self) {
        self.training = true;
    }

    pub fn eval(&mut self) {
        self.training = false;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Inference-mode logits through `path`.
    pub fn logits(&self, ids: &[usize], path: PathId, mode: ForwardMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let base = ModelVars::frozen(&mut tape, &self.base.weights);
        let pect = PectVars::register(&mut tape, &self.adapters, false);
        let out = pect_model_forward(
            &mut tape,
            &base,
            &pect,
            &self.base.config,
            &self.adapters.config,
            ids,
            path,
            mode,
            &mut ForwardContext::inference(),
        )?;
        Ok(tape.value(out).clone())
    }

    pub fn view(&self, path: PathId, mode: ForwardMode) -> PathView<'_> {
        PathView { model: self, path, mode }
    }
}

/// One path of a [`PectModel`] seen as a plain next-token model.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    pub model: &'a PectModel,
    pub path: PathId,
    pub mode: ForwardMode,
}

impl NextTokenModel for PathView<'_> {
    fn max_seq_len(&self) -> usize {
        self.model.base.config.max_seq_len
    }

    fn vocab_size(&self) -> usize {
        self.model.base.config.vocab_size
    }

    fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        self.model.logits(ids, self.path, self.mode)
    }
}

/// Owned counterpart of [`PathView`] for sharing across threads.
#[derive(Clone, Debug)]
pub struct PathModel {
    pub model: Arc<PectModel>,
    pub path: PathId,
    pub mode: ForwardMode,
}

impl NextTokenModel for PathModel {
    fn max_seq_len(&self) -> usize {
        self.model.base.config.max_seq_len
    }

    fn vocab_size(&self) -> usize {
        self.model.base.config.vocab_size
    }

    fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        self.model.logits(ids, self.path, self.mode)
    }
}
