//! The single JSON configuration file and its flag overrides.
//!
//! Every leaf key is unique across sections and maps to the flag of the same
//! name with dashes, so `model.d_model` is `--d-model`.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::RunnerConfig;
use crate::cotune::{TrainConfig, UpdatePolicy};
use crate::error::{Error, Result};
use crate::forge::AugmentationAxis;
use crate::pect::{ForwardMode, PectConfig};
use crate::transformer::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Offline, seed-determined templates.
    Stub,
    /// JSON over HTTP; the token comes from the environment.
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RtslmKind {
    /// Deterministic clause parser.
    Rule,
    /// The frozen base model without adapters.
    Base,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    /// The co-tuned checkpoint.
    Checkpoint,
    /// Replays each case's reference; checks a benchmark directory.
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Dual,
    Single,
}

impl From<ModeArg> for ForwardMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dual => ForwardMode::Dual,
            ModeArg::Single => ForwardMode::Single,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Pect,
    Separate,
}

impl From<PolicyArg> for UpdatePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Pect => UpdatePolicy::Pect,
            PolicyArg::Separate => UpdatePolicy::Separate,
        }
    }
}

/// Base model geometry. `vocab_size` caps the vocabulary learned from the
/// datasets when no base checkpoint exists yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::toy(512);
        ModelSection {
            vocab_size: m.vocab_size,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            max_seq_len: m.max_seq_len,
        }
    }
}

impl ModelSection {
    pub fn geometry(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PectSection {
    pub rank: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// `d_ff / 8` when unset.
    pub p_ff: Option<usize>,
    pub dropout: f64,
    pub scale: f64,
    pub mode: ForwardMode,
}

impl Default for PectSection {
    fn default() -> Self {
        PectSection {
            rank: 64,
            lambda: 0.5,
            gamma: 0.5,
            p_ff: None,
            dropout: 0.1,
            scale: 1.0,
            mode: ForwardMode::Dual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub max_steps: Option<usize>,
    pub tdd_fraction: Option<f64>,
    pub update_mask: UpdatePolicy,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_initial: t.lr_initial,
            max_steps: t.max_steps,
            tdd_fraction: t.tdd_fraction,
            update_mask: t.update_mask,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub datasets: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub bench: Option<PathBuf>,
    pub problem: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub generator: GeneratorKind,
    /// Remote endpoint; falls back to the environment when unset.
    pub endpoint: Option<String>,
    pub parallelism: usize,
    pub max_attempts: usize,
    pub gen_temperature: f64,
    pub max_tokens: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            generator: GeneratorKind::Stub,
            endpoint: None,
            parallelism: 1,
            max_attempts: 3,
            gen_temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeSection {
    /// Rewrites per axis per statement.
    pub fanout: usize,
    pub axes: Vec<AugmentationAxis>,
}

impl Default for ForgeSection {
    fn default() -> Self {
        ForgeSection {
            fanout: 1,
            axes: AugmentationAxis::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub retrieval_k: usize,
    pub max_new_tokens: usize,
    pub concurrent: bool,
    /// Zero decodes greedily.
    pub decode_temperature: f64,
    pub rtslm: RtslmKind,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            retrieval_k: 3,
            max_new_tokens: 64,
            concurrent: true,
            decode_temperature: 0.0,
            rtslm: RtslmKind::Rule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples: usize,
    pub k: Vec<usize>,
    pub eval_temperature: f64,
    pub workers: usize,
    pub run_cmd: Vec<String>,
    pub code_file: String,
    pub time_limit_s: f64,
    pub eval_model: EvalModel,
    /// Externally supplied human ratings, copied into the report.
    pub stc: Option<f64>,
    pub urc: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let r = RunnerConfig::default();
        EvalSection {
            samples: 20,
            k: vec![1, 5],
            eval_temperature: 0.8,
            workers: 1,
            run_cmd: r.run_cmd,
            code_file: r.code_file,
            time_limit_s: r.default_time_limit_s,
            eval_model: EvalModel::Checkpoint,
            stc: None,
            urc: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// Master seed; every consumer draws from its own named stream.
    pub seed: u64,
    pub model: ModelSection,
    pub pect: PectSection,
    pub train: TrainSection,
    pub paths: PathsSection,
    pub backend: BackendSection,
    pub forge: ForgeSection,
    pub pipeline: PipelineSection,
    pub eval: EvalSection,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Adapter settings with the rank clamped to the model width.
    pub fn pect_config(&self, model: &ModelConfig) -> PectConfig {
        self.train_config().pect_config(model)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_initial: self.train.lr_initial,
            seed: self.seed,
            mode: self.pect.mode,
            update_mask: self.train.update_mask,
            lambda: self.pect.lambda,
            gamma: self.pect.gamma,
            rank: self.pect.rank,
            dropout: self.pect.dropout,
            p_ff: self.pect.p_ff,
            scale: self.pect.scale,
            max_steps: self.train.max_steps,
            tdd_fraction: self.train.tdd_fraction,
        }
    }

    pub fn runner(&self) -> RunnerConfig {
        RunnerConfig {
            run_cmd: self.eval.run_cmd.clone(),
            code_file: self.eval.code_file.clone(),
            default_time_limit_s: self.eval.time_limit_s,
            workers: self.eval.workers,
            temp_root: None,
        }
    }
}

/// Flags shared by every subcommand; each overrides the config key of the
/// same name.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Vocabulary cap for a fresh base model
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    /// Model width
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    /// Attention heads
    #[arg(long, global = true)]
    pub n_heads: Option<usize>,
    /// Transformer blocks
    #[arg(long, global = true)]
    pub n_layers: Option<usize>,
    /// Feed-forward hidden width
    #[arg(long, global = true)]
    pub d_ff: Option<usize>,
    /// Context window in tokens
    #[arg(long, global = true)]
    pub max_seq_len: Option<usize>,

    /// Adapter rank
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Shared adapter weight of the decomposition path
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Projection weight of the decomposition path
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Projection hidden width
    #[arg(long, global = true)]
    pub p_ff: Option<usize>,
    /// Adapter dropout during training
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Adapter scale (alpha / rank)
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Forward mode
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,

    /// Passes over both datasets
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Samples per step
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Peak learning rate
    #[arg(long, global = true)]
    pub lr_initial: Option<f64>,
    /// Step budget overriding epochs
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Probability that a step draws from the decomposition dataset
    #[arg(long, global = true)]
    pub tdd_fraction: Option<f64>,
    /// Which adapters a step may change
    #[arg(long, global = true, value_enum)]
    pub update_mask: Option<PolicyArg>,

    /// Corpus directory
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Dataset directory holding tdd.jsonl and cgd.jsonl
    #[arg(long, global = true)]
    pub datasets: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    /// Benchmark directory
    #[arg(long, global = true)]
    pub bench: Option<PathBuf>,
    /// Problem statement file
    #[arg(long, global = true)]
    pub problem: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Text generator behind the forge
    #[arg(long, global = true, value_enum)]
    pub generator: Option<GeneratorKind>,
    /// Remote generator endpoint
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Concurrent generator calls
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Attempts per generator call
    #[arg(long, global = true)]
    pub max_attempts: Option<usize>,
    /// Generator sampling temperature
    #[arg(long, global = true)]
    pub gen_temperature: Option<f64>,
    /// Generator output budget
    #[arg(long, global = true)]
    pub max_tokens: Option<usize>,

    /// Rewrites per augmentation axis
    #[arg(long, global = true)]
    pub fanout: Option<usize>,
    /// Augmentation axes, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub axes: Option<Vec<AugmentationAxis>>,

    /// Reference documents per requirement transformation
    #[arg(long, global = true)]
    pub retrieval_k: Option<usize>,
    /// Decoding budget per model call
    #[arg(long, global = true)]
    pub max_new_tokens: Option<usize>,
    /// Solve sub-tasks concurrently
    #[arg(long, global = true)]
    pub concurrent: Option<bool>,
    /// Pipeline sampling temperature; 0 decodes greedily
    #[arg(long, global = true)]
    pub decode_temperature: Option<f64>,
    /// Requirement transformer
    #[arg(long, global = true, value_enum)]
    pub rtslm: Option<RtslmKind>,

    /// Generations per benchmark case
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// pass@k values, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Benchmark sampling temperature; 0 decodes greedily
    #[arg(long, global = true)]
    pub eval_temperature: Option<f64>,
    /// Benchmark cases and test cases run at once
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Runner command, comma separated; {code_path} names the program
    #[arg(long, global = true, value_delimiter = ',')]
    pub run_cmd: Option<Vec<String>>,
    /// File name programs are written to
    #[arg(long, global = true)]
    pub code_file: Option<String>,
    /// Default per-test time limit in seconds
    #[arg(long, global = true)]
    pub time_limit_s: Option<f64>,
    /// Model under evaluation
    #[arg(long, global = true, value_enum)]
    pub eval_model: Option<EvalModel>,
    /// Externally rated specification correctness
    #[arg(long, global = true)]
    pub stc: Option<f64>,
    /// Externally rated user-requirement coverage
    #[arg(long, global = true)]
    pub urc: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut AppConfig) {
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = &self.$src { $dst = v.clone().into(); })*
            };
        }
        set!(
            seed => c.seed,
            vocab_size => c.model.vocab_size,
            d_model => c.model.d_model,
            n_heads => c.model.n_heads,
            n_layers => c.model.n_layers,
            d_ff => c.model.d_ff,
            max_seq_len => c.model.max_seq_len,
            rank => c.pect.rank,
            lambda => c.pect.lambda,
            gamma => c.pect.gamma,
            dropout => c.pect.dropout,
            scale => c.pect.scale,
            mode => c.pect.mode,
            epochs => c.train.epochs,
            batch_size => c.train.batch_size,
            lr_initial => c.train.lr_initial,
            update_mask => c.train.update_mask,
            generator => c.backend.generator,
            parallelism => c.backend.parallelism,
            max_attempts => c.backend.max_attempts,
            gen_temperature => c.backend.gen_temperature,
            max_tokens => c.backend.max_tokens,
            fanout => c.forge.fanout,
            axes => c.forge.axes,
            retrieval_k => c.pipeline.retrieval_k,
            max_new_tokens => c.pipeline.max_new_tokens,
            concurrent => c.pipeline.concurrent,
            decode_temperature => c.pipeline.decode_temperature,
            rtslm => c.pipeline.rtslm,
            samples => c.eval.samples,
            k => c.eval.k,
            eval_temperature => c.eval.eval_temperature,
            workers => c.eval.workers,
            run_cmd => c.eval.run_cmd,
            code_file => c.eval.code_file,
            time_limit_s => c.eval.time_limit_s,
            eval_model => c.eval.eval_model,
        );
        set!(
            p_ff => c.pect.p_ff,
            max_steps => c.train.max_steps,
            tdd_fraction => c.train.tdd_fraction,
            corpus => c.paths.corpus,
            datasets => c.paths.datasets,
            checkpoints => c.paths.checkpoints,
            bench => c.paths.bench,
            problem => c.paths.problem,
            out => c.paths.out,
            endpoint => c.backend.endpoint,
            stc => c.eval.stc,
            urc => c.eval.urc,
        );
    }
}
