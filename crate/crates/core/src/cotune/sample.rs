use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pect::PathId;
use crate::transformer::{Vocabulary, BOS, EOS, SEP};

/// Dataset a sample was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "TDD")]
    Tdd,
    #[serde(rename = "CGD")]
    Cgd,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Tdd => "TDD",
            Source::Cgd => "CGD",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSample {
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
    pub source: Source,
}

impl TrainSample {
    pub fn from_text(vocab: &Vocabulary, prompt: &str, response: &str, source: Source) -> Self {
        TrainSample {
            prompt: vocab.tokenize(prompt).ids,
            response: vocab.tokenize(response).ids,
            source,
        }
    }
}

/// Decomposition samples train the decomposition path and code samples the
/// code path.
pub fn route_sample(sample: &TrainSample) -> PathId {
    match sample.source {
        Source::Tdd => PathId::Tdp,
        Source::Cgd => PathId::Cgp,
    }
}

/// Target id that the loss skips.
pub const IGNORE: usize = usize::MAX;

/// Prompt tokens framed for decoding: `BOS prompt SEP`.
pub fn prompt_ids(prompt: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(prompt.len() + 2);
    ids.push(BOS);
    ids.extend_from_slice(prompt);
    ids.push(SEP);
    ids
}

/// Inputs and shifted targets for `BOS prompt SEP response EOS`, where only
/// response and EOS positions are scored. Sequences longer than the window
/// lose their tail; `None` when no scored position survives.
pub fn encode_sample(sample: &TrainSample, max_seq_len: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut ids = prompt_ids(&sample.prompt);
    let first_scored = ids.len();
    ids.extend_from_slice(&sample.response);
    ids.push(EOS);
    ids.truncate(max_seq_len + 1);
    if ids.len() <= first_scored {
        return None;
    }
    let inputs = ids[..ids.len() - 1].to_vec();
    let targets = (1..ids.len())
        .map(|j| if j >= first_scored { ids[j] } else { IGNORE })
        .collect();
    Some((inputs, targets))
}
