use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::NextTokenModel;
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_row<R: Rng>(row: &[f64], temperature: f64, rng: &mut R) -> usize {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(row)
}

/// Extends `prompt` one token at a time, recomputing the full forward pass per
/// step. Stops after `max_new` tokens, on a stop token (which is kept), or when
/// the context window is full. Returns only the generated tokens.
pub fn decode(
    model: &dyn NextTokenModel,
    prompt: &TokenSequence,
    mode: DecodeMode,
    max_new: usize,
    stop: &[usize],
) -> Result<TokenSequence> {
    if max_new == 0 {
        return Err(Error::Contract("max_new must be at least 1".into()));
    }
    if prompt.is_empty() {
        return Err(Error::Contract("decode needs a nonempty prompt".into()));
    }
    if prompt.len() > model.max_seq_len() {
        return Err(Error::Contract(format!(
            "prompt of {} tokens exceeds max_seq_len {}",
            prompt.len(),
            model.max_seq_len()
        )));
    }
    let mut rng = match mode {
        DecodeMode::Sample { temperature, seed } => {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(Error::Contract(format!("temperature must be positive, got {temperature}")));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        DecodeMode::Greedy => None,
    };
    let mut ids = prompt.ids.clone();
    let mut generated = Vec::new();
    while generated.len() < max_new && ids.len() < model.max_seq_len() {
        let logits = model.logits(&ids)?;
        let last = logits.row(logits.rows() - 1);
        let next = match (&mode, rng.as_mut()) {
            (DecodeMode::Sample { temperature, .. }, Some(r)) => sample_row(last, *temperature, r),
            _ => argmax(last),
        };
        ids.push(next);
        generated.push(next);
        if stop.contains(&next) {
            break;
        }
    }
    Ok(TokenSequence::new(generated))
}
