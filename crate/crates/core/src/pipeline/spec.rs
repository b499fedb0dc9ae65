//! Task specifications and their canonical Markdown form:
//!
//! ```text
//! # Task Target
//! Detect R-peaks in an ECG recording.
//!
//! # Input Specification
//! - signal (numpy.ndarray): raw ECG samples
//!
//! # Output Specification
//! - peak_indices (list[int]): sample index of every R-peak
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_HEADING: &str = "# Task Target";
pub const INPUT_HEADING: &str = "# Input Specification";
pub const OUTPUT_HEADING: &str = "# Output Specification";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub type_name: String,
    pub description: String,
}

impl ParamSpec {
    pub fn new(name: &str, type_name: &str, description: &str) -> Self {
        ParamSpec {
            name: name.into(),
            type_name: type_name.into(),
            description: description.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
            return Err(Error::Contract(format!("invalid parameter name {:?}", self.name)));
        }
        if self.type_name.trim().is_empty()
            || self.type_name.trim() != self.type_name
            || self.type_name.contains(')')
            || self.type_name.contains('\n')
        {
            return Err(Error::Contract(format!("invalid type name {:?}", self.type_name)));
        }
        if self.description.contains('\n') || self.description.trim() != self.description {
            return Err(Error::Contract(format!(
                "parameter description must be one trimmed line: {:?}",
                self.description
            )));
        }
        Ok(())
    }

    pub(crate) fn render(&self) -> String {
        if self.description.is_empty() {
            format!("- {} ({})", self.name, self.type_name)
        } else {
            format!("- {} ({}): {}", self.name, self.type_name, self.description)
        }
    }

    pub(crate) fn parse(line: &str) -> Option<ParamSpec> {
        let rest = line.strip_prefix("- ")?;
        let open = rest.find(" (")?;
        let name = &rest[..open];
        let after = &rest[open + 2..];
        let close = after.find(')')?;
        let type_name = &after[..close];
        let tail = &after[close + 1..];
        let description = if tail.is_empty() {
            ""
        } else {
            tail.strip_prefix(": ").or_else(|| tail.strip_prefix(':'))?.trim()
        };
        let p = ParamSpec::new(name, type_name, description);
        p.validate().ok().map(|_| p)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpecification {
    pub target: String,
    pub inputs: Vec<ParamSpec>,
    pub outputs: Vec<ParamSpec>,
}

impl TaskSpecification {
    pub fn validate(&self) -> Result<()> {
        if self.target.trim().is_empty() || self.target.trim() != self.target {
            return Err(Error::Contract("task target must be nonempty and trimmed".into()));
        }
        if self.target.split('\n').any(|l| l.trim().is_empty() || l.starts_with('#')) {
            return Err(Error::Contract(
                "task target must not contain blank or heading lines".into(),
            ));
        }
        for p in self.inputs.iter().chain(&self.outputs) {
            p.validate()?;
        }
        Ok(())
    }

    /// Canonical Markdown, ending in a newline.
    pub fn render(&self) -> String {
        let section = |heading: &str, params: &[ParamSpec]| {
            let mut s = heading.to_string();
            for p in params {
                s.push('\n');
                s.push_str(&p.render());
            }
            s
        };
        format!(
            "{TARGET_HEADING}\n{}\n\n{}\n\n{}\n",
            self.target,
            section(INPUT_HEADING, &self.inputs),
            section(OUTPUT_HEADING, &self.outputs)
        )
    }

    /// Strict parse: the three headings in order, a nonempty target and only
    /// parameter lines under the I/O headings.
    pub fn parse(md: &str) -> Result<Self> {
        let fail = |msg: String| Error::format(msg, md);
        let text = md.replace("\r\n", "\n");
        let mut lines = text.lines().map(str::trim_end).peekable();
        while lines.peek().is_some_and(|l| l.is_empty()) {
            lines.next();
        }
        if lines.next() != Some(TARGET_HEADING) {
            return Err(fail(format!("specification must start with {TARGET_HEADING:?}")));
        }
        let mut target_lines = Vec::new();
        let mut saw_input = false;
        for l in lines.by_ref() {
            if l == INPUT_HEADING {
                saw_input = true;
                break;
            }
            if l.starts_with('#') {
                return Err(fail(format!("unexpected heading {l:?} in task target")));
            }
            target_lines.push(l);
        }
        if !saw_input {
            return Err(fail(format!("missing {INPUT_HEADING:?} section")));
        }
        while target_lines.last().is_some_and(|l| l.is_empty()) {
            target_lines.pop();
        }
        if target_lines.iter().any(|l| l.is_empty()) {
            return Err(fail("task target contains a blank line".into()));
        }
        let target = target_lines.join("\n").trim().to_string();
        if target.is_empty() {
            return Err(fail("task target is empty".into()));
        }

        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut in_outputs = false;
        for l in lines {
            if l.is_empty() {
                continue;
            }
            if l == OUTPUT_HEADING && !in_outputs {
                in_outputs = true;
                continue;
            }
            let p = ParamSpec::parse(l).ok_or_else(|| fail(format!("not a parameter line: {l:?}")))?;
            if in_outputs {
                outputs.push(p);
            } else {
                inputs.push(p);
            }
        }
        if !in_outputs {
            return Err(fail(format!("missing {OUTPUT_HEADING:?} section")));
        }
        let spec = TaskSpecification { target, inputs, outputs };
        spec.validate().map_err(|e| fail(e.to_string()))?;
        Ok(spec)
    }
}
