//! End-to-end orchestration and the output bundle.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{EmbeddingIndex, DEFAULT_RETRIEVAL_K};
use super::lm::LanguageModel;
use super::spec::TaskSpecification;
use super::stages::{decompose_tagged, generate_tagged, transform_tagged, Stage, StageError, Transcript};
use crate::error::{Error, Result};
use crate::seed::indexed_seed;
use crate::transformer::DecodeMode;

/// The three roles, each behind the text interface.
#[derive(Clone)]
pub struct PipelineModels {
    pub tdslm: Arc<dyn LanguageModel>,
    pub rtslm: Arc<dyn LanguageModel>,
    pub cgslm: Arc<dyn LanguageModel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub retrieval_k: usize,
    pub decoding: DecodeMode,
    /// Run transform and generate for different sub-tasks in parallel.
    pub concurrent: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            retrieval_k: DEFAULT_RETRIEVAL_K,
            decoding: DecodeMode::Greedy,
            concurrent: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub description: String,
    pub specification: TaskSpecification,
    pub language: String,
    pub code: String,
    pub documentation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineFailure {
    /// 1-based sub-task index; `None` when decomposition failed.
    pub subtask: Option<usize>,
    pub stage: Stage,
    pub message: String,
    /// Raw model output or transcript for format errors.
    pub raw: Option<String>,
}

impl PipelineFailure {
    fn new(subtask: Option<usize>, e: StageError) -> Self {
        let (message, raw) = match e.error {
            Error::Format { message, raw } => (message, Some(raw)),
            other => (other.to_string(), None),
        };
        PipelineFailure {
            subtask,
            stage: e.stage,
            message,
            raw,
        }
    }
}

/// Completed sub-tasks in decomposition order, up to the first failure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub problem: String,
    pub subtasks: Vec<SubtaskResult>,
    /// Sub-task count from decomposition, including those not completed.
    pub planned: usize,
    pub failure: Option<PipelineFailure>,
}

impl PipelineResult {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn for_subtask(decoding: DecodeMode, i: usize) -> DecodeMode {
    match decoding {
        DecodeMode::Greedy => DecodeMode::Greedy,
        DecodeMode::Sample { temperature, seed } => DecodeMode::Sample {
            temperature,
            seed: indexed_seed(seed, "subtask", i as u64),
        },
    }
}

fn solve_subtask(
    i: usize,
    description: &str,
    models: &PipelineModels,
    index: Option<&EmbeddingIndex>,
    opts: &PipelineOptions,
) -> std::result::Result<SubtaskResult, StageError> {
    let decoding = for_subtask(opts.decoding, i);
    let mut transcript = Transcript::default();
    let specification = transform_tagged(
        description,
        models.rtslm.as_ref(),
        index,
        opts.retrieval_k,
        decoding,
        &mut transcript,
    )?;
    let c = generate_tagged(&specification, models.cgslm.as_ref(), decoding)?;
    Ok(SubtaskResult {
        description: description.to_string(),
        specification,
        language: c.language,
        code: c.code,
        documentation: c.documentation,
    })
}

/// Decompose, then transform and generate every sub-task. Stage failures are
/// reported in the result together with everything completed before them.
pub fn run_pipeline(
    problem: &str,
    models: &PipelineModels,
    index: Option<&EmbeddingIndex>,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    if opts.retrieval_k == 0 {
        return Err(Error::Config("retrieval_k must be at least 1".into()));
    }
    let mut result = PipelineResult {
        problem: problem.to_string(),
        subtasks: Vec::new(),
        planned: 0,
        failure: None,
    };
    let descriptions = match decompose_tagged(problem, models.tdslm.as_ref(), opts.decoding) {
        Ok(d) => d,
        Err(e) => {
            result.failure = Some(PipelineFailure::new(None, e));
            return Ok(result);
        }
    };
    result.planned = descriptions.len();
    let solve = |(i, d): (usize, &String)| solve_subtask(i, d, models, index, opts);
    let outcomes: Vec<_> = if opts.concurrent {
        descriptions.par_iter().enumerate().map(solve).collect()
    } else {
        // Sequential mode stops at the first failure.
        let mut v = Vec::new();
        for item in descriptions.iter().enumerate() {
            let r = solve(item);
            let failed = r.is_err();
            v.push(r);
            if failed {
                break;
            }
        }
        v
    };
    for (i, r) in outcomes.into_iter().enumerate() {
        match r {
            Ok(s) => result.subtasks.push(s),
            Err(e) => {
                result.failure = Some(PipelineFailure::new(Some(i + 1), e));
                break;
            }
        }
    }
    Ok(result)
}

pub fn extension_for(language: &str) -> &'static str {
    match language.to_ascii_lowercase().as_str() {
        "python" | "py" => "py",
        "c" => "c",
        "cpp" | "c++" => "cpp",
        "rust" | "rs" => "rs",
        "javascript" | "js" => "js",
        "java" => "java",
        "sh" | "bash" | "shell" => "sh",
        _ => "txt",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub index: usize,
    pub description: String,
    pub code: String,
    pub readme: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub problem: String,
    /// Directories in execution order.
    pub order: Vec<String>,
    pub subtasks: Vec<BundleEntry>,
    pub failure: Option<PipelineFailure>,
}

/// Writes `subtask_<i>/code.<ext>`, `subtask_<i>/README.md` and
/// `manifest.json` under `dir`.
pub fn write_bundle(result: &PipelineResult, dir: &Path) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
    let mut entries = Vec::new();
    for (i, s) in result.subtasks.iter().enumerate() {
        let name = format!("subtask_{}", i + 1);
        let sub = dir.join(&name);
        fs::create_dir_all(&sub).map_err(Error::at_path(&sub))?;
        let code_name = format!("code.{}", extension_for(&s.language));
        let mut code = s.code.clone();
        if !code.ends_with('\n') {
            code.push('\n');
        }
        fs::write(sub.join(&code_name), code).map_err(Error::at_path(sub.join(&code_name)))?;
        let mut readme = format!("# Sub-task {}\n\n{}\n\n{}", i + 1, s.description, s.specification.render());
        if !s.documentation.is_empty() {
            readme.push_str(&format!("\n# Documentation\n{}\n", s.documentation));
        }
        fs::write(sub.join("README.md"), readme).map_err(Error::at_path(sub.join("README.md")))?;
        entries.push(BundleEntry {
            index: i + 1,
            description: s.description.clone(),
            code: format!("{name}/{code_name}"),
            readme: format!("{name}/README.md"),
        });
    }
    let manifest = BundleManifest {
        problem: result.problem.clone(),
        order: entries.iter().map(|e| format!("subtask_{}", e.index)).collect(),
        subtasks: entries,
        failure: result.failure.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(Error::at_path(&path))?;
    Ok(manifest)
}
