//! Pre-norm decoder-only transformer evaluated on a [`Tape`].

use super::config::ModelConfig;
use super::tokenizer::{TokenSequence, Vocabulary};
use super::weights::{BaseWeights, SwiGluWeights};
use crate::autodiff::ops::DEFAULT_LAYER_NORM_EPS;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct SwiGluVars {
    pub gate: Var,
    pub up: Var,
    pub down: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ffn: SwiGluVars,
}

/// Base weights recorded on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub tok_emb: Var,
    pub pos_emb: Var,
    pub blocks: Vec<BlockVars>,
    pub lnf_gain: Var,
    pub lnf_bias: Var,
    pub head: Var,
}

fn leaf(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

impl SwiGluVars {
    pub fn register(tape: &mut Tape, w: &SwiGluWeights, trainable: bool) -> Self {
        SwiGluVars {
            gate: leaf(tape, &w.gate, trainable),
            up: leaf(tape, &w.up, trainable),
            down: leaf(tape, &w.down, trainable),
        }
    }
}

impl ModelVars {
    /// Records `weights`; `trainable(name)` selects which become gradient
    /// leaves (the base model is frozen, so normally none are).
    pub fn register(tape: &mut Tape, weights: &BaseWeights, trainable: impl Fn(&str) -> bool) -> Self {
        let tok_emb = leaf(tape, &weights.tok_emb, trainable("tok_emb"));
        let pos_emb = leaf(tape, &weights.pos_emb, trainable("pos_emb"));
        let blocks = weights
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let t = |m: &str| trainable(&format!("block.{i}.{m}"));
                BlockVars {
                    ln1_gain: leaf(tape, &b.ln1_gain, t("ln1.gain")),
                    ln1_bias: leaf(tape, &b.ln1_bias, t("ln1.bias")),
                    wq: leaf(tape, &b.wq, t("wq")),
                    wk: leaf(tape, &b.wk, t("wk")),
                    wv: leaf(tape, &b.wv, t("wv")),
                    wo: leaf(tape, &b.wo, t("wo")),
                    ln2_gain: leaf(tape, &b.ln2_gain, t("ln2.gain")),
                    ln2_bias: leaf(tape, &b.ln2_bias, t("ln2.bias")),
                    ffn: SwiGluVars {
                        gate: leaf(tape, &b.ffn.gate, t("ffn.gate")),
                        up: leaf(tape, &b.ffn.up, t("ffn.up")),
                        down: leaf(tape, &b.ffn.down, t("ffn.down")),
                    },
                }
            })
            .collect();
        ModelVars {
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: leaf(tape, &weights.lnf_gain, trainable("lnf.gain")),
            lnf_bias: leaf(tape, &weights.lnf_bias, trainable("lnf.bias")),
            head: leaf(tape, &weights.head, trainable("head")),
        }
    }

    pub fn frozen(tape: &mut Tape, weights: &BaseWeights) -> Self {
        Self::register(tape, weights, |_| false)
    }
}

/// `x · wᵀ` for a weight stored `[out × in]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    tape.matmul_nt(x, w)
}

pub fn swiglu(tape: &mut Tape, x: Var, w: &SwiGluVars) -> Result<Var> {
    let g = linear(tape, x, w.gate)?;
    let g = tape.silu(g);
    let u = linear(tape, x, w.up)?;
    let h = tape.mul(g, u)?;
    linear(tape, h, w.down)
}

/// Token plus learned absolute position embeddings.
pub fn embed(tape: &mut Tape, vars: &ModelVars, cfg: &ModelConfig, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::Contract("cannot embed an empty token sequence".into()));
    }
    if ids.len() > cfg.max_seq_len {
        return Err(Error::Contract(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            ids.len(),
            cfg.max_seq_len
        )));
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather_rows(vars.tok_emb, ids)?;
    let pos = tape.gather_rows(vars.pos_emb, &positions)?;
    tape.add(tok, pos)
}

pub struct AttentionOutput {
    /// Concatenated head outputs before the output projection.
    pub heads: Var,
    /// Per-head `[T×T]` causal attention weights.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention with a causal mask on already projected
/// queries, keys and values (`[T × d_model]` each).
pub fn causal_multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, n_heads: usize) -> Result<AttentionOutput> {
    let (t, d) = tape.value(q).dims2()?;
    for other in [k, v] {
        if tape.value(other).dims2()? != (t, d) {
            return Err(Error::Shape(format!(
                "q/k/v shapes differ: {:?} vs {:?}",
                tape.value(q).shape(),
                tape.value(other).shape()
            )));
        }
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Shape(format!("{d} features cannot split into {n_heads} heads")));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let p = tape.causal_softmax(scores)?;
        outs.push(tape.matmul(p, vh)?);
        weights.push(p);
    }
    Ok(AttentionOutput {
        heads: tape.concat_cols(&outs)?,
        weights,
    })
}

/// Self-attention sublayer on its (already normalised) input.
pub fn attention_forward(tape: &mut Tape, block: &BlockVars, x: Var, n_heads: usize) -> Result<(Var, Vec<Var>)> {
    let q = linear(tape, x, block.wq)?;
    let k = linear(tape, x, block.wk)?;
    let v = linear(tape, x, block.wv)?;
    let att = causal_multi_head(tape, q, k, v, n_heads)?;
    Ok((linear(tape, att.heads, block.wo)?, att.weights))
}

/// `h = x + Attn(LN₁(x))`, then `h + FFN(LN₂(h))`.
pub fn block_forward(tape: &mut Tape, block: &BlockVars, x: Var, n_heads: usize) -> Result<Var> {
    let n1 = tape.layer_norm(x, block.ln1_gain, block.ln1_bias, DEFAULT_LAYER_NORM_EPS)?;
    let (a, _) = attention_forward(tape, block, n1, n_heads)?;
    let h = tape.add(x, a)?;
    let n2 = tape.layer_norm(h, block.ln2_gain, block.ln2_bias, DEFAULT_LAYER_NORM_EPS)?;
    let f = swiglu(tape, n2, &block.ffn)?;
    tape.add(h, f)
}

/// Final normalisation and output projection.
pub fn lm_head(tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x, vars.lnf_gain, vars.lnf_bias, DEFAULT_LAYER_NORM_EPS)?;
    linear(tape, n, vars.head)
}

/// `[T × vocab]` logits for a token sequence.
pub fn model_forward(tape: &mut Tape, vars: &ModelVars, cfg: &ModelConfig, ids: &[usize]) -> Result<Var> {
    let mut x = embed(tape, vars, cfg, ids)?;
    for b in &vars.blocks {
        x = block_forward(tape, b, x, cfg.n_heads)?;
    }
    lm_head(tape, vars, x)
}

/// Anything that yields next-token logits for a prefix.
pub trait NextTokenModel: Send + Sync {
    fn max_seq_len(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// `[T × vocab]` logits for `ids`.
    fn logits(&self, ids: &[usize]) -> Result<Tensor>;
}

impl<T: NextTokenModel + ?Sized> NextTokenModel for std::sync::Arc<T> {
    fn max_seq_len(&self) -> usize {
        (**self).max_seq_len()
    }

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        (**self).logits(ids)
    }
}

/// Frozen base model with its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub weights: BaseWeights,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, weights: BaseWeights) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        Ok(TransformerModel {
            config,
            vocab,
            weights,
        })
    }

    pub fn forward(&self, tokens: &TokenSequence) -> Result<Tensor> {
        self.logits(&tokens.ids)
    }
}

impl NextTokenModel for TransformerModel {
    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = ModelVars::frozen(&mut tape, &self.weights);
        let out = model_forward(&mut tape, &vars, &self.config, ids)?;
        Ok(tape.value(out).clone())
    }
}
