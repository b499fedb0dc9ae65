//! Benchmark harness: text and code metrics, a sandboxed test runner, and
//! the report over a benchmark directory.

pub mod metrics;
pub mod runner;
pub mod sandbox;

pub use metrics::{bleu, code_embedding_similarity, format_correctness_rate, pass_at_k, pass_rate, BLEU_MAX_N};
pub use runner::{
    aggregate, load_benchmark, run_benchmark, Aggregates, BenchModels, BenchOptions, Benchmark, BenchmarkCase,
    CaseKind, CaseMeta, CaseReport, CaseScores, EvalReport, Erratum, HumanRatings, SampleStatus, REPORT_SCHEMA,
};
pub use sandbox::{run_test_cases, CaseOutcome, Expectation, FailReason, RunnerConfig, TestCase, TestRun};
