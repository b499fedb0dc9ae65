//! One function per subcommand. Artifacts go to the configured paths and a
//! short summary to `out`; logs go to stderr.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::config::{AppConfig, EvalModel, GeneratorKind, RtslmKind};
use crate::bench::{load_benchmark, run_benchmark, BenchModels, BenchOptions, CaseKind, HumanRatings};
use crate::cotune::{encode_sample, train, write_loss_csv, Source, TrainManifest, TrainSample};
use crate::error::{Error, Result};
use crate::format::{render_code_block, split_code_block};
use crate::forge::{
    read_dataset, write_dataset, DatasetRecord, DeterministicStub, Forge, ForgeOptions, GenerationParams,
    GeneratorBackend, RemoteBackend, ReviewItem, TddRecord,
};
use crate::pect::{
    count_trainable, load_adapters, merge_path_adapters, save_adapters, ForwardMode, PathId, PectModel,
};
use crate::pipeline::{
    adapted_lm, base_lm, run_pipeline, write_bundle, EmbeddingIndex, HashingTfIdf, LanguageModel, PipelineModels,
    PipelineOptions, RuleBasedRtslm, ScriptedLm, DEFAULT_EMBED_DIM,
};
use crate::seed::{stream_rng, stream_seed};
use crate::transformer::{load_model, save_model, BaseWeights, DecodeMode, InitScales, TransformerModel, Vocabulary};

pub const TDD_FILE: &str = "tdd.jsonl";
pub const CGD_FILE: &str = "cgd.jsonl";
pub const REVIEW_FILE: &str = "review_queue.jsonl";
pub const BASE_FILE: &str = "base.json";
pub const ADAPTERS_FILE: &str = "adapters.json";
pub const MANIFEST_FILE: &str = "train_manifest.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const MERGED_TDP_FILE: &str = "merged_tdp.json";
pub const MERGED_CGP_FILE: &str = "merged_cgp.json";
pub const RESULT_FILE: &str = "result.json";

fn require<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing --{} (paths.{key})", key.replace('_', "-"))))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::at_path(path))
}

fn decoding(temperature: f64, seed: u64) -> DecodeMode {
    if temperature == 0.0 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Sample { temperature, seed }
    }
}

fn backend(cfg: &AppConfig) -> Result<Box<dyn GeneratorBackend>> {
    Ok(match cfg.backend.generator {
        GeneratorKind::Stub => Box::new(DeterministicStub {
            seed: stream_seed(cfg.seed, "forge"),
        }),
        GeneratorKind::Remote => match &cfg.backend.endpoint {
            Some(e) => Box::new(RemoteBackend::new(e.clone(), std::env::var(crate::forge::backend::TOKEN_ENV).ok())),
            None => Box::new(RemoteBackend::from_env()?),
        },
    })
}

fn forge_options(cfg: &AppConfig) -> ForgeOptions {
    ForgeOptions {
        fanout: cfg.forge.fanout,
        axes: cfg.forge.axes.clone(),
        max_attempts: cfg.backend.max_attempts,
        parallelism: cfg.backend.parallelism,
        params: GenerationParams {
            temperature: cfg.backend.gen_temperature,
            max_tokens: cfg.backend.max_tokens,
            seed: stream_seed(cfg.seed, "generate"),
        },
    }
}

pub fn forge(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let corpus = require(&cfg.paths.corpus, "corpus")?;
    let datasets = require(&cfg.paths.datasets, "datasets")?;
    let b = backend(cfg)?;
    let result = Forge::new(b.as_ref(), forge_options(cfg)).forge_corpus(corpus)?;
    result.write(datasets)?;
    writeln!(out, "tdd {} cgd {} review {}", result.tdd.len(), result.cgd.len(), result.review.len())?;
    Ok(())
}

fn read_review(path: &Path) -> Result<Vec<ReviewItem>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn augment(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let datasets = require(&cfg.paths.datasets, "datasets")?;
    let path = datasets.join(TDD_FILE);
    let records = read_dataset(&path)?;
    let tdd = records.iter().map(TddRecord::from_record).collect::<Result<Vec<_>>>()?;
    let done: BTreeSet<(String, String)> = tdd
        .iter()
        .filter_map(|r| Some((r.provenance.parent.clone()?, r.provenance.axis?.to_string())))
        .collect();
    let b = backend(cfg)?;
    let forge = Forge::new(b.as_ref(), forge_options(cfg));
    let mut added = Vec::new();
    let mut rejected = Vec::new();
    for r in tdd.iter().filter(|r| r.provenance.axis.is_none()) {
        for &axis in &cfg.forge.axes {
            if done.contains(&(r.id.clone(), axis.to_string())) {
                continue;
            }
            let o = forge.augment_problem(r, axis)?;
            added.extend(o.accepted);
            rejected.extend(o.rejected);
        }
    }
    let mut all: Vec<DatasetRecord> = records;
    all.extend(added.iter().map(TddRecord::to_record));
    let tmp = path.with_extension("jsonl.tmp");
    write_dataset(&all, &tmp)?;
    fs::rename(&tmp, &path).map_err(Error::at_path(&path))?;

    let review_path = datasets.join(REVIEW_FILE);
    let mut review = read_review(&review_path)?;
    let n_rejected = rejected.len();
    for r in rejected {
        if !review.contains(&r) {
            review.push(r);
        }
    }
    let mut text = String::new();
    for r in &review {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_file(&review_path, &text)?;
    writeln!(out, "added {} rejected {} total {}", added.len(), n_rejected, all.len())?;
    Ok(())
}

fn samples(records: &[DatasetRecord], vocab: &Vocabulary, max_seq_len: usize, name: &str) -> Vec<TrainSample> {
    let all: Vec<TrainSample> = records.iter().map(|r| r.to_sample(vocab)).collect();
    let kept: Vec<TrainSample> = all.iter().filter(|s| encode_sample(s, max_seq_len).is_some()).cloned().collect();
    if kept.len() < all.len() {
        log::warn!(
            "{name}: {} record(s) have prompts longer than the window and are skipped",
            all.len() - kept.len()
        );
    }
    kept
}

fn fresh_base(cfg: &AppConfig, records: &[&DatasetRecord]) -> Result<TransformerModel> {
    let texts = records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]);
    let cap = cfg.model.vocab_size.saturating_sub(Vocabulary::bytes_only().len());
    let vocab = Vocabulary::build(texts, 1, cap);
    let geometry = cfg.model.geometry(vocab.len());
    geometry.validate()?;
    let weights = BaseWeights::random(&geometry, InitScales::default(), &mut stream_rng(cfg.seed, "base"));
    TransformerModel::new(geometry, vocab, weights)
}

pub fn cotune(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let datasets = require(&cfg.paths.datasets, "datasets")?;
    let ckpt = require(&cfg.paths.checkpoints, "checkpoints")?;
    let (tdd_path, cgd_path) = (datasets.join(TDD_FILE), datasets.join(CGD_FILE));
    let tdd_records = read_dataset(&tdd_path)?;
    let cgd_records = read_dataset(&cgd_path)?;
    fs::create_dir_all(ckpt).map_err(Error::at_path(ckpt))?;

    let base_path = ckpt.join(BASE_FILE);
    let base = if base_path.exists() {
        let m = load_model(&base_path)?;
        if m.config != cfg.model.geometry(m.config.vocab_size) {
            log::warn!("{} differs from the configured geometry; using the checkpoint", base_path.display());
        }
        m
    } else {
        let all: Vec<&DatasetRecord> = tdd_records.iter().chain(&cgd_records).collect();
        let m = fresh_base(cfg, &all)?;
        save_model(&m, &base_path)?;
        m
    };
    let window = base.config.max_seq_len;
    let tdd = samples(&tdd_records, &base.vocab, window, "tdd");
    let cgd = samples(&cgd_records, &base.vocab, window, "cgd");

    let tc = cfg.train_config();
    let mut model = tc.init_model(base)?;
    let report = train(&mut model, &tdd, &cgd, &tc)?;
    save_adapters(&model.adapters, cfg.pect.mode, &ckpt.join(ADAPTERS_FILE))?;
    write_loss_csv(&report.curve, &ckpt.join(LOSS_FILE))?;
    let manifest = TrainManifest {
        tdd_path,
        cgd_path,
        seed: cfg.seed,
        config: tc,
        pect: model.adapters.config,
        total_steps: report.total_steps,
        tdd_samples: tdd.len(),
        cgd_samples: cgd.len(),
    };
    write_file(&ckpt.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    let last = |s: Source| report.losses(s).last().copied().unwrap_or(f64::NAN);
    writeln!(
        out,
        "steps {} final loss tdd {:.6} cgd {:.6}",
        report.total_steps,
        last(Source::Tdd),
        last(Source::Cgd)
    )?;
    Ok(())
}

/// Base and adapters from a checkpoint directory, with the stored mode.
pub fn load_pect(ckpt: &Path) -> Result<(PectModel, ForwardMode)> {
    let base = load_model(&ckpt.join(BASE_FILE))?;
    let (adapters, mode) = load_adapters(&ckpt.join(ADAPTERS_FILE), &base.config)?;
    let mut model = PectModel::new(base, adapters)?;
    model.eval();
    Ok((model, mode))
}

pub fn merge(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt = require(&cfg.paths.checkpoints, "checkpoints")?;
    let (model, mode) = load_pect(ckpt)?;
    if mode == ForwardMode::Dual {
        log::warn!("adapters were tuned in dual mode; merged weights reproduce single-mode inference only");
    }
    for (path, file) in [(PathId::Tdp, MERGED_TDP_FILE), (PathId::Cgp, MERGED_CGP_FILE)] {
        let weights = merge_path_adapters(&model, path)?;
        let merged = TransformerModel::new(model.base.config, model.base.vocab.clone(), weights)?;
        save_model(&merged, &ckpt.join(file))?;
        writeln!(out, "{} -> {}", path.as_str(), ckpt.join(file).display())?;
    }
    Ok(())
}

pub fn pipeline(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let problem_path = require(&cfg.paths.problem, "problem")?;
    let ckpt = require(&cfg.paths.checkpoints, "checkpoints")?;
    let dir = require(&cfg.paths.out, "out")?;
    let problem = fs::read_to_string(problem_path).map_err(Error::at_path(problem_path))?;
    let (model, mode) = load_pect(ckpt)?;
    let n = cfg.pipeline.max_new_tokens;
    let base = Arc::new(model.base.clone());
    let model = Arc::new(model);
    let rtslm: Arc<dyn LanguageModel> = match cfg.pipeline.rtslm {
        RtslmKind::Rule => Arc::new(RuleBasedRtslm),
        RtslmKind::Base => Arc::new(base_lm(base, n)),
    };
    let models = PipelineModels {
        tdslm: Arc::new(adapted_lm(model.clone(), PathId::Tdp, mode, n)),
        rtslm,
        cgslm: Arc::new(adapted_lm(model, PathId::Cgp, mode, n)),
    };
    let index = match &cfg.paths.corpus {
        Some(c) if c.is_dir() => {
            let docs = crate::forge::ingest_corpus(c)?.into_iter().map(|d| (d.id, d.body)).collect();
            Some(EmbeddingIndex::hashing(docs, DEFAULT_EMBED_DIM, stream_seed(cfg.seed, "embed"))?)
        }
        _ => None,
    };
    let opts = PipelineOptions {
        retrieval_k: cfg.pipeline.retrieval_k,
        decoding: decoding(cfg.pipeline.decode_temperature, stream_seed(cfg.seed, "decode")),
        concurrent: cfg.pipeline.concurrent,
    };
    let result = run_pipeline(problem.trim(), &models, index.as_ref(), &opts)?;
    write_bundle(&result, dir)?;
    write_file(&dir.join(RESULT_FILE), &result.to_json()?)?;
    if let Some(f) = &result.failure {
        let at = f.subtask.map_or("decomposition".to_string(), |i| format!("sub-task {i}"));
        return Err(Error::format(
            format!("{at} failed at the {} stage: {}; partial bundle in {}", f.stage, f.message, dir.display()),
            f.raw.clone().unwrap_or_default(),
        ));
    }
    writeln!(out, "{} sub-task(s) written to {}", result.subtasks.len(), dir.display())?;
    Ok(())
}

// Replays references; unfenced code references are fenced so they parse.
fn reference_models(bench: &crate::bench::Benchmark) -> (ScriptedLm, ScriptedLm) {
    let mut dec = Vec::new();
    let mut code = Vec::new();
    for c in &bench.cases {
        match c.kind {
            CaseKind::Decomposition => dec.push((c.prompt.clone(), c.reference.clone())),
            CaseKind::Codegen => {
                let r = if split_code_block(&c.reference).is_ok() {
                    c.reference.clone()
                } else {
                    render_code_block("", c.reference.trim_end(), "")
                };
                code.push((c.prompt.clone(), r));
            }
        }
    }
    (ScriptedLm::new(dec), ScriptedLm::new(code))
}

pub fn eval(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let bench_dir = require(&cfg.paths.bench, "bench")?;
    let dir = require(&cfg.paths.out, "out")?;
    let bench = load_benchmark(bench_dir)?;
    let embedder = Arc::new(HashingTfIdf::new(DEFAULT_EMBED_DIM, stream_seed(cfg.seed, "embed"))?);
    let models = match cfg.eval.eval_model {
        EvalModel::Checkpoint => {
            let ckpt = require(&cfg.paths.checkpoints, "checkpoints")?;
            let (model, mode) = load_pect(ckpt)?;
            let model = Arc::new(model);
            let n = cfg.pipeline.max_new_tokens;
            BenchModels {
                decomposer: Arc::new(adapted_lm(model.clone(), PathId::Tdp, mode, n)),
                coder: Arc::new(adapted_lm(model, PathId::Cgp, mode, n)),
                embedder,
            }
        }
        EvalModel::Reference => {
            let (d, c) = reference_models(&bench);
            BenchModels {
                decomposer: Arc::new(d),
                coder: Arc::new(c),
                embedder,
            }
        }
    };
    let opts = BenchOptions {
        n_samples: cfg.eval.samples,
        k_values: cfg.eval.k.clone(),
        temperature: cfg.eval.eval_temperature,
        seed: stream_seed(cfg.seed, "eval"),
        workers: cfg.eval.workers,
        runner: cfg.runner(),
        human_ratings: HumanRatings {
            stc: cfg.eval.stc,
            urc: cfg.eval.urc,
        },
    };
    let report = run_benchmark(&bench, &models, &opts)?;
    report.write(dir)?;
    let csv = report.to_csv();
    if let (Some(header), Some(all)) = (csv.lines().next(), csv.lines().last()) {
        writeln!(out, "{header}\n{all}")?;
    }
    if !report.errata.is_empty() {
        log::warn!("{} benchmark case(s) skipped; see errata in report.json", report.errata.len());
    }
    Ok(())
}

pub fn params(cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let geometry = cfg.model.geometry(cfg.model.vocab_size);
    geometry.validate()?;
    let pc = cfg.pect_config(&geometry);
    let c = count_trainable(&geometry, pc.rank, true, pc.p_ff);
    let base = c.base_params as f64;
    writeln!(
        out,
        "d_model {} n_layers {} rank {} p_ff {}",
        geometry.d_model, geometry.n_layers, pc.rank, pc.p_ff
    )?;
    writeln!(out, "{:<24}{:>16}{:>14}", "component", "parameters", "% of base")?;
    let rows = [
        ("base", c.base_params),
        ("adapter (one)", c.per_adapter),
        ("path q/k/v adapters", c.per_path_params),
        ("shared k/v adapters", c.shared_params),
        ("deployed per path", c.deployed_per_path),
        ("projection layers", c.projection_params),
        ("total trainable", c.total_trainable),
    ];
    for (name, n) in rows {
        writeln!(out, "{name:<24}{n:>16}{:>13.4}%", 100.0 * n as f64 / base)?;
    }
    Ok(())
}
