//! Command-line front end wiring the forge, co-tuning, merging, the pipeline
//! and the benchmark behind one config file.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{AppConfig, EvalModel, GeneratorKind, Overrides, RtslmKind};

use crate::error::Result;

#[derive(Parser, Debug)]
#[command(name = "gpiot", version, about = "Co-tuned decomposition and code generation at desk scale")]
pub struct Cli {
    /// JSON config file; flags override its keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Build tdd.jsonl, cgd.jsonl and review_queue.jsonl from a corpus
    Forge,
    /// Add missing rewrites to an existing tdd.jsonl in place
    Augment,
    /// Co-tune adapters on both datasets
    Cotune,
    /// Fold each path's adapters into standalone base checkpoints
    Merge,
    /// Decompose a problem and generate code for every sub-task
    Pipeline,
    /// Score a model on a benchmark directory
    Eval,
    /// Print the trainable-parameter table
    Params,
}

impl Cli {
    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(&self) -> Result<AppConfig> {
        let mut cfg = match &self.config {
            Some(p) => AppConfig::load(p)?,
            None => AppConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Forge => commands::forge(&cfg, &mut out),
        Command::Augment => commands::augment(&cfg, &mut out),
        Command::Cotune => commands::cotune(&cfg, &mut out),
        Command::Merge => commands::merge(&cfg, &mut out),
        Command::Pipeline => commands::pipeline(&cfg, &mut out),
        Command::Eval => commands::eval(&cfg, &mut out),
        Command::Params => commands::params(&cfg, &mut out),
    }
}
