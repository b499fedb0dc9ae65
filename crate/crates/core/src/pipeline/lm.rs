//! Text-in text-out model interface shared by the three roles.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cotune::prompt_ids;
use crate::error::{Error, Result};
use crate::pect::{ForwardMode, PathId, PathModel, PectModel};
use crate::transformer::{decode, DecodeMode, NextTokenModel, TokenSequence, TransformerModel, Vocabulary, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelRole {
    Tdslm,
    Rtslm,
    Cgslm,
}

impl ModelRole {
    /// Adapter path bound to the role; the RTSLM runs on the bare base model.
    pub fn path(self) -> Option<PathId> {
        match self {
            ModelRole::Tdslm => Some(PathId::Tdp),
            ModelRole::Cgslm => Some(PathId::Cgp),
            ModelRole::Rtslm => None,
        }
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str, decoding: DecodeMode) -> Result<String>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn complete(&self, prompt: &str, decoding: DecodeMode) -> Result<String> {
        (**self).complete(prompt, decoding)
    }
}

/// Any next-token model plus a vocabulary, prompted as `BOS prompt SEP` and
/// decoded until `EOS`.
#[derive(Clone, Debug)]
pub struct TokenLm<M> {
    pub model: M,
    pub vocab: Vocabulary,
    pub max_new: usize,
}

impl<M: NextTokenModel + Send + Sync> LanguageModel for TokenLm<M> {
    fn complete(&self, prompt: &str, decoding: DecodeMode) -> Result<String> {
        let mut ids = prompt_ids(&self.vocab.tokenize(prompt).ids);
        let window = self.model.max_seq_len();
        if ids.len() >= window {
            // Keep the most recent context and leave room to generate.
            log::debug!("prompt of {} tokens cut to the last {}", ids.len(), window - 1);
            ids.drain(..ids.len() + 1 - window);
        }
        let out = decode(&self.model, &TokenSequence::new(ids), decoding, self.max_new, &[EOS])?;
        let body: Vec<usize> = out.ids.into_iter().take_while(|&t| t != EOS).collect();
        Ok(self.vocab.detokenize(&body))
    }
}

pub type BaseLm = TokenLm<Arc<TransformerModel>>;
pub type AdaptedLm = TokenLm<PathModel>;

pub fn base_lm(model: Arc<TransformerModel>, max_new: usize) -> BaseLm {
    let vocab = model.vocab.clone();
    TokenLm { model, vocab, max_new }
}

pub fn adapted_lm(model: Arc<PectModel>, path: PathId, mode: ForwardMode, max_new: usize) -> AdaptedLm {
    let vocab = model.base.vocab.clone();
    TokenLm {
        model: PathModel { model, path, mode },
        vocab,
        max_new,
    }
}

/// Exact-match prompt table; unknown prompts are a backend error.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedLm {
    pub responses: BTreeMap<String, String>,
}

impl ScriptedLm {
    pub fn new<I, P, R>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: Into<String>,
        R: Into<String>,
    {
        ScriptedLm {
            responses: pairs.into_iter().map(|(p, r)| (p.into(), r.into())).collect(),
        }
    }
}

impl LanguageModel for ScriptedLm {
    fn complete(&self, prompt: &str, _: DecodeMode) -> Result<String> {
        self.responses.get(prompt).cloned().ok_or_else(|| Error::Backend {
            message: format!("no scripted response for prompt {:?}", truncate(prompt, 80)),
            attempts: 1,
        })
    }
}

/// Closure-backed model for tests and fault injection.
pub struct FnLm<F>(pub F);

impl<F: Fn(&str) -> Result<String> + Send + Sync> LanguageModel for FnLm<F> {
    fn complete(&self, prompt: &str, _: DecodeMode) -> Result<String> {
        (self.0)(prompt)
    }
}

pub(crate) fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n).collect::<String>() + "..."
    }
}
