//! Benchmark loading, scoring and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    bleu, code_embedding_similarity, format_correctness_rate, pass_at_k, pass_rate, BLEU_MAX_N, BLEU_SMOOTHING,
};
use super::sandbox::{run_test_cases, Expectation, FailReason, RunnerConfig, TestCase};
use crate::error::{Error, Result};
use crate::format::{is_well_formed_decomposition, split_code_block};
use crate::pipeline::{Embedder, LanguageModel};
use crate::seed::{indexed_seed, stream_seed};
use crate::transformer::DecodeMode;

pub const REPORT_SCHEMA: &str = "gpiot-eval-report/1";
pub const PASS_AT_K_ESTIMATOR: &str = "unbiased 1 - C(n-c, k) / C(n, k)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Decomposition,
    Codegen,
}

/// Contents of `case.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMeta {
    pub kind: CaseKind,
    /// Per-test wall-clock limit; the runner default when absent.
    #[serde(default)]
    pub time_limit_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkCase {
    pub id: String,
    pub kind: CaseKind,
    pub prompt: String,
    pub reference: String,
    pub tests: Vec<TestCase>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Erratum {
    pub case: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Benchmark {
    pub cases: Vec<BenchmarkCase>,
    pub errata: Vec<Erratum>,
}

fn read_text(path: &Path) -> std::result::Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

// Numeric names sort by value, so `tests/10` follows `tests/9`.
fn entry_key(name: &str) -> (bool, u64, String) {
    match name.parse::<u64>() {
        Ok(n) => (false, n, String::new()),
        Err(_) => (true, 0, name.to_string()),
    }
}

fn sorted_dirs(dir: &Path) -> std::result::Result<Vec<(String, PathBuf)>, String> {
    let rd = std::fs::read_dir(dir).map_err(|e| format!("cannot list {}: {e}", dir.display()))?;
    let mut out = Vec::new();
    for e in rd {
        let e = e.map_err(|e| format!("cannot list {}: {e}", dir.display()))?;
        if e.path().is_dir() {
            out.push((e.file_name().to_string_lossy().into_owned(), e.path()));
        }
    }
    out.sort_by_key(|(n, _)| entry_key(n));
    Ok(out)
}

fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    path.metadata().is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
}

fn load_tests(case_dir: &Path, meta: &CaseMeta) -> std::result::Result<Vec<TestCase>, String> {
    let tests_dir = case_dir.join("tests");
    if !tests_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut tests = Vec::new();
    for (name, dir) in sorted_dirs(&tests_dir)? {
        let stdin_path = dir.join("stdin");
        let stdin = if stdin_path.exists() {
            std::fs::read(&stdin_path).map_err(|e| format!("cannot read {}: {e}", stdin_path.display()))?
        } else {
            Vec::new()
        };
        let stdout = dir.join("stdout");
        let check = dir.join("check");
        let expect = match (stdout.exists(), check.exists()) {
            (true, false) => Expectation::Stdout(
                std::fs::read(&stdout).map_err(|e| format!("cannot read {}: {e}", stdout.display()))?,
            ),
            (false, true) => {
                if !is_executable(&check) {
                    return Err(format!("test {name}: checker is not executable"));
                }
                let abs = check.canonicalize().map_err(|e| format!("test {name}: {e}"))?;
                Expectation::Checker(abs)
            }
            (true, true) => return Err(format!("test {name}: has both stdout and check")),
            (false, false) => return Err(format!("test {name}: needs stdout or check")),
        };
        tests.push(TestCase {
            name,
            stdin,
            expect,
            time_limit_s: meta.time_limit_s,
        });
    }
    Ok(tests)
}

fn load_case(id: &str, dir: &Path) -> std::result::Result<BenchmarkCase, String> {
    let meta: CaseMeta = serde_json::from_str(&read_text(&dir.join("case.json"))?)
        .map_err(|e| format!("invalid case.json: {e}"))?;
    if let Some(t) = meta.time_limit_s {
        if !(t > 0.0 && t.is_finite()) {
            return Err(format!("time limit must be positive, got {t}"));
        }
    }
    let prompt = read_text(&dir.join("prompt.txt"))?;
    let reference = read_text(&dir.join("reference.txt"))?;
    if prompt.trim().is_empty() {
        return Err("prompt is empty".into());
    }
    let tests = load_tests(dir, &meta)?;
    match meta.kind {
        CaseKind::Decomposition => {
            if !is_well_formed_decomposition(&reference) {
                return Err("reference is not a blank-line separated decomposition".into());
            }
            if !tests.is_empty() {
                return Err("decomposition cases take no tests".into());
            }
        }
        CaseKind::Codegen => {
            if tests.is_empty() {
                return Err("codegen case has no tests".into());
            }
            if reference.trim().is_empty() {
                return Err("reference is empty".into());
            }
        }
    }
    Ok(BenchmarkCase {
        id: id.to_string(),
        kind: meta.kind,
        prompt,
        reference,
        tests,
    })
}

/// Reads `dir/cases/<id>/`. Cases that fail validation are listed in the
/// errata instead of aborting the load.
pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let cases_dir = dir.join("cases");
    if !cases_dir.is_dir() {
        return Err(Error::Config(format!("{} has no cases/ directory", dir.display())));
    }
    let mut bench = Benchmark::default();
    for (id, path) in sorted_dirs(&cases_dir).map_err(Error::Config)? {
        match load_case(&id, &path) {
            Ok(c) => bench.cases.push(c),
            Err(reason) => {
                log::warn!("skipping benchmark case {id}: {reason}");
                bench.errata.push(Erratum { case: id, reason });
            }
        }
    }
    Ok(bench)
}

#[derive(Clone)]
pub struct BenchModels {
    pub decomposer: Arc<dyn LanguageModel>,
    pub coder: Arc<dyn LanguageModel>,
    pub embedder: Arc<dyn Embedder>,
}

/// Scores supplied from outside; never computed here.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRatings {
    pub stc: Option<f64>,
    pub urc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    pub n_samples: usize,
    pub k_values: Vec<usize>,
    /// Zero selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
    /// Benchmark cases evaluated at once.
    pub workers: usize,
    pub runner: RunnerConfig,
    pub human_ratings: HumanRatings,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            n_samples: 20,
            k_values: vec![1, 5],
            temperature: 0.8,
            seed: 0,
            workers: 1,
            runner: RunnerConfig::default(),
            human_ratings: HumanRatings::default(),
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if let Some(k) = self.k_values.iter().find(|&&k| k == 0 || k > self.n_samples) {
            return Err(Error::Config(format!("k = {k} must lie in 1..={}", self.n_samples)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be nonnegative, got {}", self.temperature)));
        }
        for (name, v) in [("stc", self.human_ratings.stc), ("urc", self.human_ratings.urc)] {
            if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Config(format!("{name} rating must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn k_sorted(&self) -> Vec<usize> {
        let mut k = self.k_values.clone();
        k.sort_unstable();
        k.dedup();
        k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Passed,
    /// The response did not contain exactly one fenced code block.
    FormatError,
    Failed(FailReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionScores {
    pub bleu: Vec<f64>,
    pub well_formed: Vec<bool>,
    pub mean_bleu: f64,
    pub fcr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodegenScores {
    pub samples: Vec<SampleStatus>,
    pub similarity: Vec<f64>,
    pub n: usize,
    pub c: usize,
    pub pass_at_k: BTreeMap<String, f64>,
    pub pass_rate: f64,
    pub mean_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseScores {
    Decomposition(DecompositionScores),
    Codegen(CodegenScores),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    #[serde(flatten)]
    pub scores: CaseScores,
}

/// Means over cases; `None` when no case of that kind was scored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub decomposition_cases: usize,
    pub codegen_cases: usize,
    pub mean_bleu: Option<f64>,
    pub fcr: Option<f64>,
    pub pass_at_k: BTreeMap<String, f64>,
    pub pass_rate: Option<f64>,
    pub mean_similarity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub n_samples: usize,
    pub k_values: Vec<usize>,
    pub temperature: f64,
    pub bleu_max_n: usize,
    pub bleu_smoothing: String,
    pub pass_at_k_estimator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub metadata: ReportMetadata,
    pub cases: Vec<CaseReport>,
    pub aggregates: Aggregates,
    pub human_ratings: HumanRatings,
    pub errata: Vec<Erratum>,
}

fn pass_key(k: usize) -> String {
    format!("pass@{k}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn decoding_for(opts: &BenchOptions, case: &str, sample: usize) -> DecodeMode {
    if opts.temperature == 0.0 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Sample {
            temperature: opts.temperature,
            seed: indexed_seed(stream_seed(opts.seed, case), "sample", sample as u64),
        }
    }
}

fn score_decomposition(case: &BenchmarkCase, models: &BenchModels, opts: &BenchOptions) -> Result<DecompositionScores> {
    let mut outputs = Vec::with_capacity(opts.n_samples);
    for j in 0..opts.n_samples {
        outputs.push(models.decomposer.complete(&case.prompt, decoding_for(opts, &case.id, j))?);
    }
    let bleu_scores = outputs
        .iter()
        .map(|o| bleu(o, &[&case.reference], BLEU_MAX_N))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionScores {
        mean_bleu: mean(&bleu_scores),
        fcr: format_correctness_rate(&outputs)?,
        well_formed: outputs.iter().map(|o| is_well_formed_decomposition(o)).collect(),
        bleu: bleu_scores,
    })
}

// A fenced reference is compared by its code only.
fn reference_code(reference: &str) -> String {
    split_code_block(reference).map_or_else(|_| reference.trim().to_string(), |c| c.code)
}

fn similarity_or_zero(candidate: &str, reference: &str, embedder: &dyn Embedder, case: &str) -> Result<f64> {
    match code_embedding_similarity(candidate, reference, embedder) {
        Ok(s) => Ok(s),
        Err(Error::NumericDomain(m)) => {
            log::warn!("case {case}: similarity undefined ({m}); scored 0");
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

fn score_codegen(case: &BenchmarkCase, models: &BenchModels, opts: &BenchOptions) -> Result<CodegenScores> {
    let reference = reference_code(&case.reference);
    let work = match &opts.runner.temp_root {
        Some(root) => tempfile::Builder::new().prefix("gpiot-sample-").tempdir_in(root)?,
        None => tempfile::Builder::new().prefix("gpiot-sample-").tempdir()?,
    };
    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut similarity = Vec::with_capacity(opts.n_samples);
    for j in 0..opts.n_samples {
        let out = models.coder.complete(&case.prompt, decoding_for(opts, &case.id, j))?;
        match split_code_block(&out) {
            Ok(block) => {
                similarity.push(similarity_or_zero(&block.code, &reference, models.embedder.as_ref(), &case.id)?);
                let path = work.path().join(format!("sample_{j}"));
                std::fs::write(&path, format!("{}\n", block.code)).map_err(Error::at_path(&path))?;
                let run = run_test_cases(&path, &case.tests, &opts.runner)?;
                samples.push(if run.all_passed {
                    SampleStatus::Passed
                } else {
                    let first = run.cases.iter().find_map(|c| c.reason).unwrap_or(FailReason::WrongOutput);
                    SampleStatus::Failed(first)
                });
            }
            Err(_) => {
                similarity.push(similarity_or_zero(&out, &reference, models.embedder.as_ref(), &case.id)?);
                samples.push(SampleStatus::FormatError);
            }
        }
    }
    work.close()?;
    let n = samples.len();
    let c = samples.iter().filter(|s| **s == SampleStatus::Passed).count();
    let mut pak = BTreeMap::new();
    for k in opts.k_sorted() {
        pak.insert(pass_key(k), pass_at_k(n, c, k)?);
    }
    Ok(CodegenScores {
        mean_similarity: mean(&similarity),
        samples,
        similarity,
        n,
        c,
        pass_at_k: pak,
        pass_rate: pass_rate(n, c)?,
    })
}

/// Case means of the per-case scores.
pub fn aggregate(cases: &[CaseReport], k_values: &[usize]) -> Aggregates {
    let mut bleus = Vec::new();
    let mut fcrs = Vec::new();
    let mut rates = Vec::new();
    let mut sims = Vec::new();
    let mut pak: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in cases {
        match &c.scores {
            CaseScores::Decomposition(d) => {
                bleus.push(d.mean_bleu);
                fcrs.push(d.fcr);
            }
            CaseScores::Codegen(g) => {
                rates.push(g.pass_rate);
                sims.push(g.mean_similarity);
                for k in k_values {
                    let key = pass_key(*k);
                    if let Some(v) = g.pass_at_k.get(&key) {
                        pak.entry(key).or_default().push(*v);
                    }
                }
            }
        }
    }
    let opt_mean = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
    Aggregates {
        decomposition_cases: bleus.len(),
        codegen_cases: rates.len(),
        mean_bleu: opt_mean(&bleus),
        fcr: opt_mean(&fcrs),
        pass_at_k: pak.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        pass_rate: opt_mean(&rates),
        mean_similarity: opt_mean(&sims),
    }
}

/// Generates `n_samples` responses per case and scores them. Cases run on up
/// to `workers` threads; the report keeps the benchmark order.
pub fn run_benchmark(bench: &Benchmark, models: &BenchModels, opts: &BenchOptions) -> Result<EvalReport> {
    opts.validate()?;
    let mut errata = bench.errata.clone();
    let mut runnable = Vec::new();
    for case in &bench.cases {
        if case.kind == CaseKind::Codegen {
            let reference = reference_code(&case.reference);
            if models.embedder.embed(&reference)?.iter().all(|&x| x == 0.0) {
                errata.push(Erratum {
                    case: case.id.clone(),
                    reason: "reference code has an all-zero embedding".into(),
                });
                continue;
            }
        }
        runnable.push(case);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Environment(format!("cannot start worker pool: {e}")))?;
    let scored: Vec<Result<CaseReport>> = pool.install(|| {
        runnable
            .par_iter()
            .map(|case| {
                let scores = match case.kind {
                    CaseKind::Decomposition => CaseScores::Decomposition(score_decomposition(case, models, opts)?),
                    CaseKind::Codegen => CaseScores::Codegen(score_codegen(case, models, opts)?),
                };
                Ok(CaseReport {
                    id: case.id.clone(),
                    scores,
                })
            })
            .collect()
    });
    let cases = scored.into_iter().collect::<Result<Vec<_>>>()?;
    errata.sort();
    let k_values = opts.k_sorted();
    Ok(EvalReport {
        schema: REPORT_SCHEMA.into(),
        metadata: ReportMetadata {
            seed: opts.seed,
            n_samples: opts.n_samples,
            k_values: k_values.clone(),
            temperature: opts.temperature,
            bleu_max_n: BLEU_MAX_N,
            bleu_smoothing: BLEU_SMOOTHING.into(),
            pass_at_k_estimator: PASS_AT_K_ESTIMATOR.into(),
        },
        aggregates: aggregate(&cases, &k_values),
        cases,
        human_ratings: opts.human_ratings.clone(),
        errata,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per case followed by an `ALL` row of aggregates.
    pub fn to_csv(&self) -> String {
        let keys: Vec<String> = self.metadata.k_values.iter().map(|&k| pass_key(k)).collect();
        let mut out = String::from("case,kind,bleu,fcr,pass_rate");
        for k in &keys {
            let _ = write!(out, ",{k}");
        }
        out.push_str(",similarity\n");
        for c in &self.cases {
            let (kind, bleu, fcr, rate, pak, sim) = match &c.scores {
                CaseScores::Decomposition(d) => {
                    ("decomposition", Some(d.mean_bleu), Some(d.fcr), None, BTreeMap::new(), None)
                }
                CaseScores::Codegen(g) => (
                    "codegen",
                    None,
                    None,
                    Some(g.pass_rate),
                    g.pass_at_k.clone(),
                    Some(g.mean_similarity),
                ),
            };
            let _ = write!(out, "{},{kind},{},{},{}", csv_field(&c.id), csv_num(bleu), csv_num(fcr), csv_num(rate));
            for k in &keys {
                let _ = write!(out, ",{}", csv_num(pak.get(k).copied()));
            }
            let _ = writeln!(out, ",{}", csv_num(sim));
        }
        let a = &self.aggregates;
        let _ = write!(out, "ALL,,{},{},{}", csv_num(a.mean_bleu), csv_num(a.fcr), csv_num(a.pass_rate));
        for k in &keys {
            let _ = write!(out, ",{}", csv_num(a.pass_at_k.get(k).copied()));
        }
        let _ = writeln!(out, ",{}", csv_num(a.mean_similarity));
        out
    }

    /// Writes `report.json` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(Error::at_path(&json))?;
        let csv = dir.join("summary.csv");
        std::fs::write(&csv, self.to_csv()).map_err(Error::at_path(&csv))?;
        Ok(())
    }
}
