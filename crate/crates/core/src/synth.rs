//! A small synthetic sensing world with paired decomposition and code tasks,
//! used to exercise co-tuning end to end on a toy model.
//!
//! A problem names one sensor and an ordered list of operations:
//!
//! ```text
//! process imu with filter then detect
//! ```
//!
//! Its decomposition is one `apply <op> to <sensor>` line per operation,
//! separated by blank lines. Each sub-task is turned into a specification by
//! the rule-based requirement model, and its code is `result = <op>(<sensor>)`.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cotune::{Source, TrainSample};
use crate::error::Result;
use crate::format::{join_blank_lines, render_code_block};
use crate::pect::{ForwardMode, PathId, PectModel};
use crate::pipeline::{
    adapted_lm, run_pipeline, transform_requirement, PipelineModels, PipelineOptions, PipelineResult, RuleBasedRtslm,
};
use crate::seed::stream_rng;
use crate::transformer::{BaseWeights, DecodeMode, InitScales, ModelConfig, TransformerModel, Vocabulary};

pub const SENSORS: [&str; 6] = ["imu", "ecg", "ppg", "gps", "mic", "temp"];
pub const OPS: [&str; 8] = ["filter", "resample", "normalize", "segment", "detect", "classify", "smooth", "fft"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SynthProblem {
    pub sensor: String,
    pub ops: Vec<String>,
}

impl SynthProblem {
    pub fn statement(&self) -> String {
        format!("process {} with {}", self.sensor, self.ops.join(" then "))
    }

    pub fn subtasks(&self) -> Vec<String> {
        self.ops.iter().map(|op| subtask(op, &self.sensor)).collect()
    }

    pub fn decomposition(&self) -> String {
        join_blank_lines(&self.subtasks())
    }

    pub fn expected_code(&self) -> Vec<String> {
        self.ops.iter().map(|op| code_line(op, &self.sensor)).collect()
    }
}

pub fn subtask(op: &str, sensor: &str) -> String {
    format!("apply {op} to {sensor}")
}

pub fn code_line(op: &str, sensor: &str) -> String {
    format!("result = {op}({sensor})")
}

pub fn code_response(op: &str, sensor: &str) -> String {
    render_code_block("python", &code_line(op, sensor), &format!("Applies {op} to {sensor}."))
}

/// Every problem with `min_ops..=max_ops` distinct operations, shuffled.
pub fn all_problems<R: Rng + ?Sized>(min_ops: usize, max_ops: usize, rng: &mut R) -> Vec<SynthProblem> {
    fn extend(prefix: &mut Vec<String>, left: usize, out: &mut Vec<Vec<String>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for op in OPS {
            if !prefix.iter().any(|p| p == op) {
                prefix.push(op.to_string());
                extend(prefix, left - 1, out);
                prefix.pop();
            }
        }
    }
    let mut lists = Vec::new();
    for n in min_ops..=max_ops {
        extend(&mut Vec::new(), n, &mut lists);
    }
    let mut out: Vec<SynthProblem> = SENSORS
        .iter()
        .flat_map(|s| {
            lists.iter().map(move |ops| SynthProblem {
                sensor: s.to_string(),
                ops: ops.clone(),
            })
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Specification prompt exactly as the pipeline builds it for `subtask`.
pub fn spec_prompt(subtask: &str) -> Result<String> {
    let (spec, _) = transform_requirement(subtask, &RuleBasedRtslm, None, 1, DecodeMode::Greedy)?;
    Ok(spec.render())
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub vocab: Vocabulary,
    pub tdd: Vec<TrainSample>,
    pub cgd: Vec<TrainSample>,
    /// Held-out problems for end-to-end evaluation.
    pub test: Vec<SynthProblem>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub min_ops: usize,
    pub max_ops: usize,
    /// Fraction of (op, sensor) pairs that appear in the code dataset.
    pub cgd_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 48,
            n_test: 16,
            min_ops: 2,
            max_ops: 2,
            cgd_fraction: 1.0,
        }
    }
}

pub fn build_data(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    let mut rng = stream_rng(seed, "synth");
    let problems = all_problems(cfg.min_ops, cfg.max_ops, &mut rng);
    let (train, rest) = problems.split_at(cfg.n_train.min(problems.len()));
    let test: Vec<SynthProblem> = rest.iter().take(cfg.n_test).cloned().collect();

    let mut pairs: Vec<(&str, &str)> = OPS.iter().flat_map(|o| SENSORS.iter().map(move |s| (*o, *s))).collect();
    pairs.shuffle(&mut rng);
    let keep = ((pairs.len() as f64 * cfg.cgd_fraction).round() as usize).clamp(1, pairs.len());
    pairs.truncate(keep);
    pairs.sort();

    let mut texts: Vec<(String, String, Source)> = train
        .iter()
        .map(|p| (p.statement(), p.decomposition(), Source::Tdd))
        .collect();
    for (op, sensor) in &pairs {
        texts.push((spec_prompt(&subtask(op, sensor))?, code_response(op, sensor), Source::Cgd));
    }
    let mut corpus: Vec<String> = texts.iter().flat_map(|(p, r, _)| [p.clone(), r.clone()]).collect();
    corpus.extend(test.iter().flat_map(|p| [p.statement(), p.decomposition()]));
    let vocab = Vocabulary::build(corpus.iter().map(String::as_str), 1, 512);
    let (mut tdd, mut cgd) = (Vec::new(), Vec::new());
    for (p, r, s) in texts {
        let sample = TrainSample::from_text(&vocab, &p, &r, s);
        if s == Source::Tdd { &mut tdd } else { &mut cgd }.push(sample);
    }
    Ok(SynthData { vocab, tdd, cgd, test })
}

/// Random frozen base sized for the synthetic world.
pub fn toy_base(vocab: Vocabulary, d_model: usize, n_layers: usize, max_seq_len: usize, seed: u64) -> Result<TransformerModel> {
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model,
        n_heads: 2,
        n_layers,
        d_ff: 2 * d_model,
        max_seq_len,
    };
    let w = BaseWeights::random(&cfg, InitScales::default(), &mut stream_rng(seed, "base"));
    TransformerModel::new(cfg, vocab, w)
}

pub fn exact_match(result: &PipelineResult, problem: &SynthProblem) -> bool {
    result.is_complete()
        && result.subtasks.iter().map(|s| s.code.as_str()).eq(problem.expected_code().iter().map(String::as_str))
}

/// Fraction of `problems` solved exactly by the full pipeline on `model`.
pub fn pipeline_exact_match(model: Arc<PectModel>, mode: ForwardMode, problems: &[SynthProblem], max_new: usize) -> Result<f64> {
    let models = PipelineModels {
        tdslm: Arc::new(adapted_lm(model.clone(), PathId::Tdp, mode, max_new)),
        rtslm: Arc::new(RuleBasedRtslm),
        cgslm: Arc::new(adapted_lm(model, PathId::Cgp, mode, max_new)),
    };
    let opts = PipelineOptions::default();
    let mut hits = 0usize;
    for p in problems {
        let r = run_pipeline(&p.statement(), &models, None, &opts)?;
        hits += usize::from(exact_match(&r, p));
    }
    Ok(hits as f64 / problems.len().max(1) as f64)
}

/// Picks `n` random problems, mostly for smoke tests.
pub fn sample_problems<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<SynthProblem> {
    let all = all_problems(2, 3, rng);
    all.choose_multiple(rng, n).cloned().collect()
}
