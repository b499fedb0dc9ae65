use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::transformer::{ModelConfig, SwiGluWeights};

/// Standard deviation for the projection layers' gate and up matrices.
pub const PROJECTION_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathId {
    /// Task decomposition.
    Tdp,
    /// Code generation.
    Cgp,
}

impl PathId {
    pub const ALL: [PathId; 2] = [PathId::Tdp, PathId::Cgp];

    pub fn other(self) -> PathId {
        match self {
            PathId::Tdp => PathId::Cgp,
            PathId::Cgp => PathId::Tdp,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PathId::Tdp => 0,
            PathId::Cgp => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PathId::Tdp => "tdp",
            PathId::Cgp => "cgp",
        }
    }

    /// Weight of the shared K/V adapters on this path.
    pub fn shared_coeff(self, lambda: f64) -> f64 {
        match self {
            PathId::Tdp => lambda,
            PathId::Cgp => 1.0 - lambda,
        }
    }

    /// Weight of the other path's projection feeding this path.
    pub fn cross_coeff(self, gamma: f64) -> f64 {
        match self {
            PathId::Tdp => gamma,
            PathId::Cgp => 1.0 - gamma,
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tdp" => Ok(PathId::Tdp),
            "cgp" => Ok(PathId::Cgp),
            _ => Err(Error::Config(format!("unknown path {s:?}; expected tdp or cgp"))),
        }
    }
}

/// Whether both attention paths run per block so the cross-path projections
/// see real activations, or only the active path runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardMode {
    #[default]
    Dual,
    Single,
}

impl std::str::FromStr for ForwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(ForwardMode::Dual),
            "single" => Ok(ForwardMode::Single),
            _ => Err(Error::Config(format!("unknown mode {s:?}; expected dual or single"))),
        }
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} is outside [0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PectConfig {
    pub rank: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Projection hidden width.
    pub p_ff: usize,
    pub dropout: f64,
    /// `alpha / rank`.
    pub scale: f64,
}

impl PectConfig {
    /// Rank 64, dropout 0.1, λ = γ = 0.5, `p_ff = d_ff / 8`.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        PectConfig {
            rank: 64.min(cfg.d_model),
            lambda: 0.5,
            gamma: 0.5,
            p_ff: (cfg.d_ff / 8).max(1),
            dropout: 0.1,
            scale: 1.0,
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        check_unit("lambda", self.lambda)?;
        check_unit("gamma", self.gamma)?;
        if self.rank == 0 || self.rank > cfg.d_model {
            return Err(Error::Config(format!(
                "rank {} must be in 1..={}",
                self.rank, cfg.d_model
            )));
        }
        if self.p_ff == 0 {
            return Err(Error::Config("p_ff must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.scale.is_finite() {
            return Err(Error::Config("adapter scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QkvAdapters {
    pub q: LoraAdapter,
    pub k: LoraAdapter,
    pub v: LoraAdapter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedAdapters {
    pub k: LoraAdapter,
    pub v: LoraAdapter,
}

/// SwiGLU parallel to the FFN; its output feeds the other path.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionLayer {
    pub weights: SwiGluWeights,
}

impl ProjectionLayer {
    /// Random gate/up with a zero down matrix, so the layer starts as the zero
    /// map but still receives gradient.
    pub fn init<R: Rng + ?Sized>(d_model: usize, p_ff: usize, rng: &mut R) -> Self {
        ProjectionLayer {
            weights: SwiGluWeights {
                gate: Tensor::randn(&[p_ff, d_model], PROJECTION_INIT_STD, rng),
                up: Tensor::randn(&[p_ff, d_model], PROJECTION_INIT_STD, rng),
                down: Tensor::zeros(&[d_model, p_ff]),
            },
        }
    }
}

/// Adapters of one transformer block, indexed by [`PathId::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct PectBlockParams {
    pub independent: [QkvAdapters; 2],
    pub shared: SharedAdapters,
    pub projection: [ProjectionLayer; 2],
}

impl PectBlockParams {
    pub fn path(&self, p: PathId) -> &QkvAdapters {
        &self.independent[p.index()]
    }

    pub fn projection(&self, p: PathId) -> &ProjectionLayer {
        &self.projection[p.index()]
    }
}

/// Every trainable tensor added on top of the frozen base model.
#[derive(Clone, Debug, PartialEq)]
pub struct PectAdapters {
    pub config: PectConfig,
    pub blocks: Vec<PectBlockParams>,
}

impl PectAdapters {
    pub fn init<R: Rng + ?Sized>(model: &ModelConfig, config: PectConfig, rng: &mut R) -> Result<Self> {
        config.validate(model)?;
        let d = model.d_model;
        let lora = |rng: &mut R| LoraAdapter::init(d, d, config.rank, config.scale, config.dropout, rng);
        let mut blocks = Vec::with_capacity(model.n_layers);
        for _ in 0..model.n_layers {
            let qkv = |rng: &mut R| -> Result<QkvAdapters> {
                Ok(QkvAdapters {
                    q: lora(rng)?,
                    k: lora(rng)?,
                    v: lora(rng)?,
                })
            };
            let tdp = qkv(rng)?;
            let cgp = qkv(rng)?;
            let shared = SharedAdapters {
                k: lora(rng)?,
                v: lora(rng)?,
            };
            blocks.push(PectBlockParams {
                independent: [tdp, cgp],
                shared,
                projection: [
                    ProjectionLayer::init(d, config.p_ff, rng),
                    ProjectionLayer::init(d, config.p_ff, rng),
                ],
            });
        }
        Ok(PectAdapters { config, blocks })
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Tensors under their checkpoint names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for p in PathId::ALL {
                let a = b.path(p);
                for (m, ad) in [("q", &a.q), ("k", &a.k), ("v", &a.v)] {
                    out.push((format!("block.{i}.{p}.{m}.A"), &ad.a));
                    out.push((format!("block.{i}.{p}.{m}.B"), &ad.b));
                }
            }
            for (m, ad) in [("k", &b.shared.k), ("v", &b.shared.v)] {
                out.push((format!("block.{i}.shared.{m}.A"), &ad.a));
                out.push((format!("block.{i}.shared.{m}.B"), &ad.b));
            }
            for p in PathId::ALL {
                let w = &b.projection(p).weights;
                out.push((format!("block.{i}.{p}.projection.gate"), &w.gate));
                out.push((format!("block.{i}.{p}.projection.up"), &w.up));
                out.push((format!("block.{i}.{p}.projection.down"), &w.down));
            }
        }
        out
    }

    /// Same order as [`PectAdapters::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (pi, a) in b.independent.iter_mut().enumerate() {
                let p = PathId::ALL[pi];
                for (m, ad) in [("q", &mut a.q), ("k", &mut a.k), ("v", &mut a.v)] {
                    out.push((format!("block.{i}.{p}.{m}.A"), &mut ad.a));
                    out.push((format!("block.{i}.{p}.{m}.B"), &mut ad.b));
                }
            }
            for (m, ad) in [("k", &mut b.shared.k), ("v", &mut b.shared.v)] {
                out.push((format!("block.{i}.shared.{m}.A"), &mut ad.a));
                out.push((format!("block.{i}.shared.{m}.B"), &mut ad.b));
            }
            for (pi, proj) in b.projection.iter_mut().enumerate() {
                let p = PathId::ALL[pi];
                let w = &mut proj.weights;
                out.push((format!("block.{i}.{p}.projection.gate"), &mut w.gate));
                out.push((format!("block.{i}.{p}.projection.up"), &mut w.up));
                out.push((format!("block.{i}.{p}.projection.down"), &mut w.down));
            }
        }
        out
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(k, v)| (k, v.clone())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds adapters from named tensors, checking shapes against `model`.
    pub fn from_map(model: &ModelConfig, config: PectConfig, mut map: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate(model)?;
        let mut template = PectAdapters::zeros(model, config)?;
        for (name, slot) in template.named_mut() {
            let t = map
                .remove(&name)
                .ok_or_else(|| Error::Config(format!("adapter checkpoint lacks tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Config(format!("unexpected tensor {extra} in adapter checkpoint")));
        }
        Ok(template)
    }

    /// All-zero adapters and projections (useful as a shape template and as
    /// the exact identity on the base model).
    pub fn zeros(model: &ModelConfig, config: PectConfig) -> Result<Self> {
        config.validate(model)?;
        let d = model.d_model;
        let lora = || {
            LoraAdapter::new(
                Tensor::zeros(&[config.rank, d]),
                Tensor::zeros(&[d, config.rank]),
                config.scale,
                config.dropout,
            )
        };
        let qkv = || -> Result<QkvAdapters> {
            Ok(QkvAdapters {
                q: lora()?,
                k: lora()?,
                v: lora()?,
            })
        };
        let proj = || ProjectionLayer {
            weights: SwiGluWeights::zeros(d, config.p_ff),
        };
        let blocks = (0..model.n_layers)
            .map(|_| {
                Ok(PectBlockParams {
                    independent: [qkv()?, qkv()?],
                    shared: SharedAdapters { k: lora()?, v: lora()? },
                    projection: [proj(), proj()],
                })
            })
            .collect::<Result<_>>()?;
        Ok(PectAdapters { config, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coefficients_sum_to_one() {
        for l in [0.0, 0.3, 1.0] {
            assert_eq!(PathId::Tdp.shared_coeff(l) + PathId::Cgp.shared_coeff(l), 1.0);
            assert_eq!(PathId::Tdp.cross_coeff(l) + PathId::Cgp.cross_coeff(l), 1.0);
        }
        assert_eq!(PathId::Tdp.other(), PathId::Cgp);
    }

    #[test]
    fn names_are_unique_and_round_trip() {
        let cfg = ModelConfig::toy(300);
        let pc = PectConfig {
            rank: 4,
            ..PectConfig::for_model(&cfg)
        };
        let ad = PectAdapters::init(&cfg, pc, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let names: Vec<String> = ad.named().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names.len(), cfg.n_layers * (8 * 2 + 6));
        let back = PectAdapters::from_map(&cfg, pc, ad.to_map()).unwrap();
        assert_eq!(back, ad);
    }

    #[test]
    fn bad_coefficients_rejected() {
        let cfg = ModelConfig::toy(300);
        let mut pc = PectConfig::for_model(&cfg);
        pc.lambda = 1.5;
        assert!(matches!(pc.validate(&cfg), Err(Error::Config(_))));
        pc.lambda = 0.5;
        pc.gamma = -0.1;
        assert!(matches!(pc.validate(&cfg), Err(Error::Config(_))));
    }
}
