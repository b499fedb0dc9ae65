use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimizer::{Adam, AdamConfig};
use super::sample::{encode_sample, route_sample, Source, TrainSample, IGNORE};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pect::{pect_model_forward, ForwardContext, ForwardMode, PathId, PectAdapters, PectConfig, PectModel, PectVars};
use crate::seed::{indexed_seed, stream_rng, stream_seed};
use crate::transformer::model::ModelVars;
use crate::transformer::{ModelConfig, TransformerModel};

/// Which adapters a routed step may change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdatePolicy {
    /// Routed path's own adapters, the shared adapters and both projections.
    #[default]
    Pect,
    /// Routed path's own adapters only; shared adapters and projections stay
    /// at zero.
    Separate,
}

impl std::str::FromStr for UpdatePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pect" => Ok(UpdatePolicy::Pect),
            "separate" => Ok(UpdatePolicy::Separate),
            _ => Err(Error::Config(format!("unknown update policy {s:?}; expected pect or separate"))),
        }
    }
}

/// Whether the adapter tensor `name` is updated on a step routed to `routed`.
pub fn update_allowed(name: &str, routed: PathId, policy: UpdatePolicy) -> bool {
    let mut parts = name.split('.').skip(2);
    let group = parts.next().unwrap_or("");
    let is_projection = parts.next() == Some("projection");
    match (group, policy) {
        ("shared", p) => p == UpdatePolicy::Pect,
        (_, UpdatePolicy::Pect) if is_projection => true,
        (_, UpdatePolicy::Separate) if is_projection => false,
        (g, _) => g == routed.as_str(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub seed: u64,
    pub mode: ForwardMode,
    pub update_mask: UpdatePolicy,
    pub lambda: f64,
    pub gamma: f64,
    /// Clamped to `d_model` for small models.
    pub rank: usize,
    pub dropout: f64,
    /// Projection width; `d_ff / 8` when unset.
    pub p_ff: Option<usize>,
    /// Adapter scale `alpha / rank`.
    pub scale: f64,
    /// Overrides `epochs`; epochs repeat as needed to reach it.
    pub max_steps: Option<usize>,
    /// Probability that a step draws from TDD; proportional to the number of
    /// remaining batches when unset.
    pub tdd_fraction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 4,
            lr_initial: 1e-4,
            seed: 0,
            mode: ForwardMode::Dual,
            update_mask: UpdatePolicy::Pect,
            lambda: 0.5,
            gamma: 0.5,
            rank: 64,
            dropout: 0.1,
            p_ff: None,
            scale: 1.0,
            max_steps: None,
            tdd_fraction: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !(self.lr_initial >= 0.0) || !self.lr_initial.is_finite() {
            return Err(Error::Config(format!("lr_initial {} must be finite and nonnegative", self.lr_initial)));
        }
        if let Some(f) = self.tdd_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("tdd_fraction {f} must be in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn pect_config(&self, model: &ModelConfig) -> PectConfig {
        let rank = self.rank.min(model.d_model);
        if rank != self.rank {
            log::info!("rank {} clamped to d_model {}", self.rank, model.d_model);
        }
        PectConfig {
            rank,
            lambda: self.lambda,
            gamma: self.gamma,
            p_ff: self.p_ff.unwrap_or((model.d_ff / 8).max(1)),
            dropout: self.dropout,
            scale: self.scale,
        }
    }

    /// Fresh adapters on `base`, seeded from the `init` stream.
    pub fn init_model(&self, base: TransformerModel) -> Result<PectModel> {
        let pc = self.pect_config(&base.config);
        let adapters = PectAdapters::init(&base.config, pc, &mut stream_rng(self.seed, "init"))?;
        PectModel::new(base, adapters)
    }
}

/// `lr₀ · (1 + cos(π t / T)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_initial: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Contract("cosine schedule needs total_steps > 0".into()));
    }
    if step > total_steps {
        return Err(Error::Contract(format!("step {step} is past total_steps {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_initial * (1.0 + phase.cos()) / 2.0)
}

/// Mean over samples of each sample's mean response-token cross-entropy.
/// Samples whose response falls outside the window are skipped.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    tape: &mut Tape,
    base: &ModelVars,
    pect: &PectVars,
    model: &PectModel,
    batch: &[TrainSample],
    path: PathId,
    mode: ForwardMode,
    ctx: &mut ForwardContext<'_>,
) -> Result<Var> {
    let cfg = &model.base.config;
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch {
        let Some((inputs, targets)) = encode_sample(s, cfg.max_seq_len) else {
            log::warn!("sample with {}-token prompt leaves no response in the window", s.prompt.len());
            continue;
        };
        let logits = pect_model_forward(tape, base, pect, cfg, &model.adapters.config, &inputs, path, mode, ctx)?;
        losses.push(tape.cross_entropy(logits, &targets, Some(IGNORE))?);
    }
    let Some((&first, rest)) = losses.split_first() else {
        return Err(Error::Contract("batch has no scorable response tokens".into()));
    };
    let mut total = first;
    for &l in rest {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}

fn sample_gradients(
    model: &PectModel,
    sample: &TrainSample,
    path: PathId,
    mode: ForwardMode,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let base = ModelVars::frozen(&mut tape, &model.base.weights);
    let pect = PectVars::register(&mut tape, &model.adapters, true);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut ctx = ForwardContext::training(&mut rng);
    let loss = batch_loss(&mut tape, &base, &pect, model, std::slice::from_ref(sample), path, mode, &mut ctx)?;
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    let grads = pect
        .named
        .iter()
        .map(|(name, v)| tape.grad(*v).ok_or_else(|| Error::Contract(format!("no gradient slot for {name}"))))
        .collect::<Result<_>>()?;
    Ok((value, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub mode: ForwardMode,
    pub policy: UpdatePolicy,
    pub lr: f64,
    /// Seeds the per-sample dropout streams.
    pub dropout_seed: u64,
}

/// One optimisation step on a source-homogeneous batch. Returns the batch
/// loss measured before the update.
pub fn cotune_step(model: &mut PectModel, batch: &[TrainSample], opt: &mut Adam, opts: &StepOptions) -> Result<f64> {
    let Some(first) = batch.first() else {
        return Err(Error::Contract("cotune_step needs a nonempty batch".into()));
    };
    if batch.iter().any(|s| s.source != first.source) {
        return Err(Error::Contract("batches must draw from a single source".into()));
    }
    let path = route_sample(first);
    let scorable: Vec<&TrainSample> = batch
        .iter()
        .filter(|s| encode_sample(s, model.base.config.max_seq_len).is_some())
        .collect();
    if scorable.is_empty() {
        return Err(Error::Contract("batch has no scorable response tokens".into()));
    }
    let shared: &PectModel = model;
    let results: Vec<(f64, Vec<Tensor>)> = scorable
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_gradients(shared, s, path, opts.mode, indexed_seed(opts.dropout_seed, "sample", i as u64)))
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / n;
    let mut grads = results[0].1.clone();
    for (_, g) in &results[1..] {
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(gi)?;
        }
    }
    for ((name, p), g) in model.adapters.named_mut().into_iter().zip(grads) {
        if update_allowed(&name, path, opts.policy) {
            opt.update(&name, p, &g.scale(1.0 / n), opts.lr)?;
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub source: Source,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub total_steps: usize,
    pub curve: Vec<LossPoint>,
}

impl TrainReport {
    pub fn losses(&self, source: Source) -> Vec<f64> {
        self.curve.iter().filter(|p| p.source == source).map(|p| p.loss).collect()
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Interleaved `(source, sample indices)` batches for one epoch.
fn epoch_schedule(n_tdd: usize, n_cgd: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<(Source, Vec<usize>)> {
    let mut tdd = batches(n_tdd, cfg.batch_size, rng);
    let mut cgd = batches(n_cgd, cfg.batch_size, rng);
    tdd.reverse();
    cgd.reverse();
    let mut out = Vec::with_capacity(tdd.len() + cgd.len());
    while !tdd.is_empty() || !cgd.is_empty() {
        let p = match (tdd.is_empty(), cgd.is_empty()) {
            (true, _) => 0.0,
            (_, true) => 1.0,
            _ => cfg
                .tdd_fraction
                .unwrap_or(tdd.len() as f64 / (tdd.len() + cgd.len()) as f64),
        };
        if rng.random::<f64>() < p {
            out.push((Source::Tdd, tdd.pop().expect("nonempty")));
        } else {
            out.push((Source::Cgd, cgd.pop().expect("nonempty")));
        }
    }
    out
}

/// Zeroes the shared adapters' `B` and the projections' down matrices.
pub fn zero_sharing(adapters: &mut PectAdapters) {
    for (name, t) in adapters.named_mut() {
        if (name.contains(".shared.") && name.ends_with(".B")) || name.ends_with(".projection.down") {
            *t = Tensor::zeros(t.shape());
        }
    }
}

/// Co-tunes `model`'s adapters on both datasets; the base weights are never
/// written.
pub fn train(model: &mut PectModel, tdd: &[TrainSample], cgd: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if tdd.is_empty() || cgd.is_empty() {
        return Err(Error::Config("co-tuning needs nonempty TDD and CGD datasets".into()));
    }
    if tdd.iter().any(|s| s.source != Source::Tdd) || cgd.iter().any(|s| s.source != Source::Cgd) {
        return Err(Error::Contract("dataset contains a sample tagged with the other source".into()));
    }
    model.adapters.config.lambda = cfg.lambda;
    model.adapters.config.gamma = cfg.gamma;
    model.adapters.config.validate(&model.base.config)?;
    if cfg.update_mask == UpdatePolicy::Separate {
        zero_sharing(&mut model.adapters);
    }
    let per_epoch = tdd.len().div_ceil(cfg.batch_size) + cgd.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let mut order_rng = stream_rng(cfg.seed, "train");
    let dropout_master = stream_seed(cfg.seed, "dropout");
    let mut opt = Adam::new(AdamConfig::default());
    let mut curve = Vec::with_capacity(total_steps);

    model.train();
    let mut step = 0;
    'outer: loop {
        for (source, idx) in epoch_schedule(tdd.len(), cgd.len(), cfg, &mut order_rng) {
            if step == total_steps {
                break 'outer;
            }
            let data = if source == Source::Tdd { tdd } else { cgd };
            let batch: Vec<TrainSample> = idx.iter().map(|&i| data[i].clone()).collect();
            let lr = cosine_lr(step, total_steps, cfg.lr_initial)?;
            let opts = StepOptions {
                mode: cfg.mode,
                policy: cfg.update_mask,
                lr,
                dropout_seed: indexed_seed(dropout_master, "step", step as u64),
            };
            let loss = match cotune_step(model, &batch, &mut opt, &opts) {
                Ok(l) => l,
                Err(e) => {
                    model.eval();
                    return Err(e);
                }
            };
            log::debug!("step {step} {source} loss {loss:.6} lr {lr:.3e}");
            curve.push(LossPoint { step, source, loss, lr });
            step += 1;
        }
    }
    model.eval();
    Ok(TrainReport { total_steps, curve })
}

/// Dropout-free mean loss of `samples` through their routed path.
pub fn evaluate_loss(model: &PectModel, samples: &[TrainSample], mode: ForwardMode) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let base = ModelVars::frozen(&mut tape, &model.base.weights);
            let pect = PectVars::register(&mut tape, &model.adapters, false);
            let loss = batch_loss(
                &mut tape,
                &base,
                &pect,
                model,
                std::slice::from_ref(s),
                route_sample(s),
                mode,
                &mut ForwardContext::inference(),
            )?;
            tape.value(loss).item()
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `step,source,loss,lr` rows.
pub fn loss_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("step,source,loss,lr\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{},{}", p.step, p.source, p.loss, p.lr);
    }
    s
}

pub fn write_loss_csv(curve: &[LossPoint], path: &Path) -> Result<()> {
    fs::write(path, loss_csv(curve)).map_err(Error::at_path(path))
}

/// Record of what a training run consumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub tdd_path: PathBuf,
    pub cgd_path: PathBuf,
    pub seed: u64,
    pub config: TrainConfig,
    pub pect: PectConfig,
    pub total_steps: usize,
    pub tdd_samples: usize,
    pub cgd_samples: usize,
}
