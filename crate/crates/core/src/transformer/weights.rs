use std::collections::BTreeMap;

use rand::Rng;

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// SwiGLU feed-forward weights, each stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwiGluWeights {
    pub gate: Tensor,
    pub up: Tensor,
    pub down: Tensor,
}

impl SwiGluWeights {
    pub fn zeros(d_model: usize, hidden: usize) -> Self {
        SwiGluWeights {
            gate: Tensor::zeros(&[hidden, d_model]),
            up: Tensor::zeros(&[hidden, d_model]),
            down: Tensor::zeros(&[d_model, hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gate.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.gate.len() + self.up.len() + self.down.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ffn: SwiGluWeights,
}

/// Frozen foundation-model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseWeights {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    /// Output projection, `[vocab × d_model]`.
    pub head: Tensor,
}

/// Standard deviations used by [`BaseWeights::random`].
#[derive(Clone, Copy, Debug)]
pub struct InitScales {
    pub embedding: f64,
    pub position: f64,
    /// Multiplied by `1/sqrt(fan_in)` for every linear layer.
    pub linear: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        InitScales {
            embedding: 1.0,
            position: 1.0,
            linear: 1.0,
        }
    }
}

impl BaseWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let block = BlockWeights {
            ln1_gain: Tensor::ones(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            ln2_gain: Tensor::ones(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            ffn: SwiGluWeights::zeros(d, cfg.d_ff),
        };
        BaseWeights {
            tok_emb: Tensor::zeros(&[cfg.vocab_size, d]),
            pos_emb: Tensor::zeros(&[cfg.max_seq_len, d]),
            blocks: vec![block; cfg.n_layers],
            lnf_gain: Tensor::ones(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            head: Tensor::zeros(&[cfg.vocab_size, d]),
        }
    }

    pub fn random<R: Rng + ?Sized>(cfg: &ModelConfig, scales: InitScales, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let lin = |out: usize, inp: usize, rng: &mut R| {
            Tensor::randn(&[out, inp], scales.linear / (inp as f64).sqrt(), rng)
        };
        let tok_emb = Tensor::randn(&[cfg.vocab_size, d], scales.embedding, rng);
        let pos_emb = Tensor::randn(&[cfg.max_seq_len, d], scales.position, rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockWeights {
                ln1_gain: Tensor::ones(&[d]),
                ln1_bias: Tensor::zeros(&[d]),
                wq: lin(d, d, rng),
                wk: lin(d, d, rng),
                wv: lin(d, d, rng),
                wo: lin(d, d, rng),
                ln2_gain: Tensor::ones(&[d]),
                ln2_bias: Tensor::zeros(&[d]),
                ffn: SwiGluWeights {
                    gate: lin(cfg.d_ff, d, rng),
                    up: lin(cfg.d_ff, d, rng),
                    down: lin(d, cfg.d_ff, rng),
                },
            })
            .collect();
        let head = lin(cfg.vocab_size, d, rng);
        BaseWeights {
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: Tensor::ones(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            head,
        }
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Tensors under their checkpoint names (`block.<i>.<matrix>` for block
    /// weights).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |m: &str| format!("block.{i}.{m}");
            out.extend([
                (p("ln1.gain"), &b.ln1_gain),
                (p("ln1.bias"), &b.ln1_bias),
                (p("wq"), &b.wq),
                (p("wk"), &b.wk),
                (p("wv"), &b.wv),
                (p("wo"), &b.wo),
                (p("ln2.gain"), &b.ln2_gain),
                (p("ln2.bias"), &b.ln2_bias),
                (p("ffn.gate"), &b.ffn.gate),
                (p("ffn.up"), &b.ffn.up),
                (p("ffn.down"), &b.ffn.down),
            ]);
        }
        out.extend([
            ("lnf.gain".to_string(), &self.lnf_gain),
            ("lnf.bias".to_string(), &self.lnf_bias),
            ("head".to_string(), &self.head),
        ]);
        out
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    /// Rebuilds weights from named tensors, checking every shape against `cfg`.
    pub fn from_map(cfg: &ModelConfig, mut map: BTreeMap<String, Tensor>) -> Result<Self> {
        let template = BaseWeights::zeros(cfg);
        let mut take = |name: String, like: &Tensor| -> Result<Tensor> {
            let t = map
                .remove(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != like.shape() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok(t)
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for (i, b) in template.blocks.iter().enumerate() {
            let p = |m: &str| format!("block.{i}.{m}");
            blocks.push(BlockWeights {
                ln1_gain: take(p("ln1.gain"), &b.ln1_gain)?,
                ln1_bias: take(p("ln1.bias"), &b.ln1_bias)?,
                wq: take(p("wq"), &b.wq)?,
                wk: take(p("wk"), &b.wk)?,
                wv: take(p("wv"), &b.wv)?,
                wo: take(p("wo"), &b.wo)?,
                ln2_gain: take(p("ln2.gain"), &b.ln2_gain)?,
                ln2_bias: take(p("ln2.bias"), &b.ln2_bias)?,
                ffn: SwiGluWeights {
                    gate: take(p("ffn.gate"), &b.ffn.gate)?,
                    up: take(p("ffn.up"), &b.ffn.up)?,
                    down: take(p("ffn.down"), &b.ffn.down)?,
                },
            });
        }
        let weights = BaseWeights {
            tok_emb: take("tok_emb".into(), &template.tok_emb)?,
            pos_emb: take("pos_emb".into(), &template.pos_emb)?,
            blocks,
            lnf_gain: take("lnf.gain".into(), &template.lnf_gain)?,
            lnf_bias: take("lnf.bias".into(), &template.lnf_bias)?,
            head: take("head".into(), &template.head)?,
        };
        if let Some(extra) = map.keys().next() {
            return Err(Error::Config(format!("unexpected tensor {extra} in checkpoint")));
        }
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn named_map_round_trip() {
        let cfg = ModelConfig::toy(300);
        let w = BaseWeights::random(&cfg, InitScales::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let back = BaseWeights::from_map(&cfg, w.to_map()).unwrap();
        assert_eq!(back, w);
        assert_eq!(w.param_count(), w.to_map().values().map(Tensor::len).sum::<usize>());
    }

    #[test]
    fn from_map_rejects_missing_and_extra() {
        let cfg = ModelConfig::toy(300);
        let mut m = BaseWeights::zeros(&cfg).to_map();
        m.remove("block.1.wk");
        assert!(BaseWeights::from_map(&cfg, m).is_err());
        let mut m = BaseWeights::zeros(&cfg).to_map();
        m.insert("block.9.wk".into(), Tensor::zeros(&[1]));
        assert!(BaseWeights::from_map(&cfg, m).is_err());
    }
}
