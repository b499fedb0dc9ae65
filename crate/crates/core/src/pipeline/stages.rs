//! Decomposition, requirement transformation and code generation.
//!
//! The requirement transformation is a three-turn chain. Every turn starts
//! with the retrieved context and repeats what earlier turns produced:
//!
//! ```text
//! ### Reference
//! [doc] retrieved text
//!
//! ### Description
//! <sub-task>
//!
//! ### Task Target          (turns 2 and 3)
//! ### Parameters           (turn 3)
//!
//! ### Step N: ...
//! <instruction>
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingIndex;
use super::lm::LanguageModel;
use super::spec::{ParamSpec, TaskSpecification};
use crate::error::{Error, Result};
use crate::format::{split_blank_lines, split_code_block, CodeAndDoc};
use crate::transformer::DecodeMode;

pub const REFERENCE_HEADING: &str = "### Reference";
pub const DESCRIPTION_HEADING: &str = "### Description";
pub const TARGET_SECTION: &str = "### Task Target";
pub const PARAMETERS_SECTION: &str = "### Parameters";
pub const STEP_TARGET: &str = "### Step 1: Task Target";
pub const STEP_IO: &str = "### Step 2: I/O Parameters";
pub const STEP_FORMAT: &str = "### Step 3: Specification";
pub const INPUTS_LABEL: &str = "Inputs:";
pub const OUTPUTS_LABEL: &str = "Outputs:";

const TARGET_INSTRUCTION: &str = "State the target of this task in one sentence.";
const IO_INSTRUCTION: &str = "List every input and output as `- name (type): description`, \
inputs under `Inputs:` and outputs under `Outputs:`.";
const FORMAT_INSTRUCTION: &str = "Rewrite the information above as Markdown with the headings \
`# Task Target`, `# Input Specification` and `# Output Specification`.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decompose,
    Target,
    Io,
    Format,
    Generate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Decompose => "decompose",
            Stage::Target => "target",
            Stage::Io => "io",
            Stage::Format => "format",
            Stage::Generate => "generate",
        })
    }
}

/// One prompt and the model's answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub stage: Stage,
    pub prompt: String,
    pub response: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            s.push_str(&format!("=== {} prompt ===\n{}\n=== {} response ===\n{}\n", t.stage, t.prompt, t.stage, t.response));
        }
        s
    }
}

/// An error together with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    fn format(stage: Stage, message: impl fmt::Display, transcript: &Transcript) -> Self {
        StageError {
            stage,
            error: Error::format(format!("{stage} stage: {message}"), transcript.render()),
        }
    }

    fn other(stage: Stage, error: Error) -> Self {
        StageError { stage, error }
    }
}

impl From<StageError> for Error {
    fn from(e: StageError) -> Error {
        e.error
    }
}

pub(crate) fn decompose_tagged(
    statement: &str,
    tdslm: &dyn LanguageModel,
    decoding: DecodeMode,
) -> std::result::Result<Vec<String>, StageError> {
    let stage = Stage::Decompose;
    if statement.trim().is_empty() {
        return Err(StageError::other(stage, Error::Contract("problem statement is empty".into())));
    }
    let raw = tdslm.complete(statement, decoding).map_err(|e| StageError::other(stage, e))?;
    let split = split_blank_lines(&raw);
    if split.items.len() < 2 {
        return Err(StageError::other(
            stage,
            Error::format(
                format!("expected blank-line separated sub-tasks, found {} item(s)", split.items.len()),
                raw,
            ),
        ));
    }
    for n in &split.notes {
        log::warn!("decomposition output repaired: {n}");
    }
    Ok(split.items)
}

/// Sub-task descriptions from the TDSLM, split on blank lines. Output that
/// does not split into at least two sub-tasks is a format error.
pub fn decompose_problem(statement: &str, tdslm: &dyn LanguageModel, decoding: DecodeMode) -> Result<Vec<String>> {
    Ok(decompose_tagged(statement, tdslm, decoding)?)
}

/// Reference block for `query`, empty when retrieval is disabled.
pub fn context_block(index: Option<&EmbeddingIndex>, query: &str, k: usize) -> Result<String> {
    let Some(index) = index.filter(|i| !i.is_empty()) else {
        return Ok(String::new());
    };
    let mut s = format!("{REFERENCE_HEADING}\n");
    for r in index.retrieve(query, k)? {
        s.push_str(&format!("[{}] {}\n", r.doc_id, r.text.trim()));
    }
    s.push('\n');
    Ok(s)
}

fn stage_prompt(context: &str, sections: &[(&str, &str)], step: &str, instruction: &str) -> String {
    let mut p = context.to_string();
    for (heading, body) in sections {
        p.push_str(&format!("{heading}\n{}\n\n", body.trim_end()));
    }
    p.push_str(&format!("{step}\n{instruction}"));
    p
}

fn parse_target(out: &str) -> std::result::Result<String, String> {
    let lines: Vec<&str> = out.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.as_slice() {
        [one] if !one.starts_with('#') => Ok(one.to_string()),
        [] => Err("empty task target".into()),
        [_] => Err("task target is a heading".into()),
        _ => Err(format!("task target spans {} lines", lines.len())),
    }
}

/// Parses the `Inputs:` / `Outputs:` listing of the second turn.
pub fn parse_io(out: &str) -> std::result::Result<(Vec<ParamSpec>, Vec<ParamSpec>), String> {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut section = None;
    for l in out.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()) {
        match l.trim() {
            INPUTS_LABEL if section.is_none() => section = Some(false),
            OUTPUTS_LABEL if section == Some(false) => section = Some(true),
            _ => {
                let p = ParamSpec::parse(l.trim_start()).ok_or_else(|| format!("not a parameter line: {l:?}"))?;
                match section {
                    Some(false) => inputs.push(p),
                    Some(true) => outputs.push(p),
                    None => return Err(format!("parameter before {INPUTS_LABEL:?}")),
                }
            }
        }
    }
    if section != Some(true) {
        return Err(format!("expected {INPUTS_LABEL:?} followed by {OUTPUTS_LABEL:?}"));
    }
    Ok((inputs, outputs))
}

pub fn render_io(inputs: &[ParamSpec], outputs: &[ParamSpec]) -> String {
    let mut s = INPUTS_LABEL.to_string();
    for p in inputs {
        s.push('\n');
        s.push_str(&p.render());
    }
    s.push('\n');
    s.push_str(OUTPUTS_LABEL);
    for p in outputs {
        s.push('\n');
        s.push_str(&p.render());
    }
    s
}

pub(crate) fn transform_tagged(
    description: &str,
    rtslm: &dyn LanguageModel,
    index: Option<&EmbeddingIndex>,
    k: usize,
    decoding: DecodeMode,
    transcript: &mut Transcript,
) -> std::result::Result<TaskSpecification, StageError> {
    if description.trim().is_empty() {
        return Err(StageError::other(Stage::Target, Error::Contract("sub-task description is empty".into())));
    }
    let context = context_block(index, description, k).map_err(|e| StageError::other(Stage::Target, e))?;
    let ask = |stage: Stage, prompt: String, transcript: &mut Transcript| {
        let response = rtslm.complete(&prompt, decoding).map_err(|e| StageError::other(stage, e))?;
        transcript.turns.push(Turn {
            stage,
            prompt,
            response: response.clone(),
        });
        Ok::<_, StageError>(response)
    };

    let p1 = stage_prompt(&context, &[(DESCRIPTION_HEADING, description)], STEP_TARGET, TARGET_INSTRUCTION);
    let out1 = ask(Stage::Target, p1, transcript)?;
    let target = parse_target(&out1).map_err(|m| StageError::format(Stage::Target, m, transcript))?;

    let p2 = stage_prompt(
        &context,
        &[(DESCRIPTION_HEADING, description), (TARGET_SECTION, &target)],
        STEP_IO,
        IO_INSTRUCTION,
    );
    let out2 = ask(Stage::Io, p2, transcript)?;
    let (inputs, outputs) = parse_io(&out2).map_err(|m| StageError::format(Stage::Io, m, transcript))?;

    let p3 = stage_prompt(
        &context,
        &[
            (DESCRIPTION_HEADING, description),
            (TARGET_SECTION, &target),
            (PARAMETERS_SECTION, &render_io(&inputs, &outputs)),
        ],
        STEP_FORMAT,
        FORMAT_INSTRUCTION,
    );
    let out3 = ask(Stage::Format, p3, transcript)?;
    TaskSpecification::parse(&out3).map_err(|e| {
        let msg = match e {
            Error::Format { message, .. } => message,
            other => other.to_string(),
        };
        StageError::format(Stage::Format, msg, transcript)
    })
}

/// Turns a sub-task description into a specification through the three-turn
/// chain. `index` of `None` (or an empty index) runs without context.
pub fn transform_requirement(
    description: &str,
    rtslm: &dyn LanguageModel,
    index: Option<&EmbeddingIndex>,
    k: usize,
    decoding: DecodeMode,
) -> Result<(TaskSpecification, Transcript)> {
    let mut transcript = Transcript::default();
    let spec = transform_tagged(description, rtslm, index, k, decoding, &mut transcript)?;
    Ok((spec, transcript))
}

pub(crate) fn generate_tagged(
    spec: &TaskSpecification,
    cgslm: &dyn LanguageModel,
    decoding: DecodeMode,
) -> std::result::Result<CodeAndDoc, StageError> {
    let stage = Stage::Generate;
    spec.validate().map_err(|e| StageError::other(stage, e))?;
    let out = cgslm.complete(&spec.render(), decoding).map_err(|e| StageError::other(stage, e))?;
    split_code_block(&out).map_err(|e| StageError::other(stage, e))
}

/// Code and documentation for a specification, prompted with its canonical
/// Markdown.
pub fn generate_code(spec: &TaskSpecification, cgslm: &dyn LanguageModel, decoding: DecodeMode) -> Result<CodeAndDoc> {
    Ok(generate_tagged(spec, cgslm, decoding)?)
}

/// Body of the last `heading` section in `prompt`, up to the next `###` line.
pub fn prompt_section<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let marker = format!("{heading}\n");
    let start = if prompt.starts_with(&marker) {
        prompt.rfind(&format!("\n{marker}")).map_or(marker.len(), |i| i + 1 + marker.len())
    } else {
        prompt.rfind(&format!("\n{marker}"))? + 1 + marker.len()
    };
    let rest = &prompt[start..];
    let end = rest.find("\n### ").unwrap_or(rest.len());
    Some(rest[..end].trim())
}
