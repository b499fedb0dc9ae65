//! Deterministic stand-in for the requirement-transformation model.
//!
//! It answers the three turns by reading the prompt it is given, so it sits
//! behind the same interface as a trained model. Explicit clauses of the form
//! `takes name (type): text` and `returns name (type): text` are honoured;
//! otherwise the input is the last word of the description and the output is
//! a generic `result`.

use super::lm::LanguageModel;
use super::spec::{ParamSpec, TaskSpecification};
use super::stages::{
    parse_io, prompt_section, render_io, DESCRIPTION_HEADING, PARAMETERS_SECTION, STEP_FORMAT, STEP_IO, STEP_TARGET,
    TARGET_SECTION,
};
use crate::error::{Error, Result};
use crate::transformer::DecodeMode;

#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBasedRtslm;

fn clauses(description: &str) -> Vec<String> {
    description
        .split(';')
        .map(|c| c.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|c| !c.is_empty())
        .collect()
}

fn io_clause(clause: &str) -> Option<(bool, &str)> {
    let lower = clause.to_ascii_lowercase();
    if lower.starts_with("takes ") {
        Some((false, &clause[6..]))
    } else if lower.starts_with("returns ") {
        Some((true, &clause[8..]))
    } else {
        None
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn rule_target(description: &str) -> String {
    let kept: Vec<String> = clauses(description).into_iter().filter(|c| io_clause(c).is_none()).collect();
    if kept.is_empty() {
        description.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        kept.join("; ")
    }
}

pub fn rule_io(description: &str) -> (Vec<ParamSpec>, Vec<ParamSpec>) {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for c in clauses(description) {
        if let Some((is_out, rest)) = io_clause(&c) {
            let rest = rest.trim().trim_end_matches('.');
            if let Some(p) = ParamSpec::parse(&format!("- {rest}")) {
                if is_out { &mut outputs } else { &mut inputs }.push(p);
            }
        }
    }
    let w = words(&rule_target(description));
    if inputs.is_empty() {
        let name = w.last().cloned().unwrap_or_else(|| "data".into());
        inputs.push(ParamSpec::new(&name, "array", "input samples"));
    }
    if outputs.is_empty() {
        let op = w.first().cloned().unwrap_or_else(|| "task".into());
        outputs.push(ParamSpec::new("result", "array", &format!("output of {op}")));
    }
    (inputs, outputs)
}

impl LanguageModel for RuleBasedRtslm {
    fn complete(&self, prompt: &str, _: DecodeMode) -> Result<String> {
        let section = |h: &str| {
            prompt_section(prompt, h).ok_or_else(|| Error::Backend {
                message: format!("prompt has no {h:?} section"),
                attempts: 1,
            })
        };
        let description = section(DESCRIPTION_HEADING)?;
        if prompt.contains(STEP_TARGET) {
            Ok(rule_target(description))
        } else if prompt.contains(STEP_IO) {
            let (i, o) = rule_io(description);
            Ok(render_io(&i, &o))
        } else if prompt.contains(STEP_FORMAT) {
            let (inputs, outputs) = parse_io(section(PARAMETERS_SECTION)?).map_err(|m| Error::Backend {
                message: m,
                attempts: 1,
            })?;
            let spec = TaskSpecification {
                target: section(TARGET_SECTION)?.to_string(),
                inputs,
                outputs,
            };
            Ok(spec.render())
        } else {
            Err(Error::Backend {
                message: "prompt is not a requirement-transformation turn".into(),
                attempts: 1,
            })
        }
    }
}
