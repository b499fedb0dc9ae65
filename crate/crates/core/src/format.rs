//! Text grammars shared by the forge, the pipeline and the metrics: blank-line
//! separated sub-task lists and single fenced code blocks.

use crate::error::{Error, Result};

/// Sub-tasks recovered from blank-line separated text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlankLineSplit {
    pub items: Vec<String>,
    /// Deviations from the canonical form that were repaired: separators of
    /// more than one blank line, whitespace-only lines, leading or trailing
    /// blank lines, CRLF line ends.
    pub notes: Vec<String>,
}

impl BlankLineSplit {
    pub fn is_canonical(&self) -> bool {
        self.notes.is_empty()
    }
}

/// Splits on runs of blank lines. Never fails; an empty input yields no items.
pub fn split_blank_lines(text: &str) -> BlankLineSplit {
    let mut notes = Vec::new();
    let normalized;
    let text = if text.contains('\r') {
        notes.push("CRLF line ends normalized".to_string());
        normalized = text.replace("\r\n", "\n");
        normalized.as_str()
    } else {
        text
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut items = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut blank_run = 0usize;
    let mut leading = true;
    for line in body.split('\n') {
        if line.trim().is_empty() {
            if !line.is_empty() {
                push_note(&mut notes, "whitespace-only line treated as blank");
            }
            blank_run += 1;
            continue;
        }
        if !current.is_empty() && blank_run > 0 {
            items.push(current.join("\n"));
            current.clear();
            if blank_run > 1 {
                push_note(&mut notes, "separator of several blank lines collapsed");
            }
        } else if leading && blank_run > 0 {
            push_note(&mut notes, "leading blank lines dropped");
        }
        leading = false;
        blank_run = 0;
        current.push(line);
    }
    if !current.is_empty() {
        items.push(current.join("\n"));
    }
    if blank_run > 0 && !items.is_empty() {
        push_note(&mut notes, "trailing blank lines dropped");
    }
    BlankLineSplit { items, notes }
}

fn push_note(notes: &mut Vec<String>, note: &str) {
    if !notes.iter().any(|n| n == note) {
        notes.push(note.to_string());
    }
}

/// Canonical form: items joined by exactly one blank line.
pub fn join_blank_lines<S: AsRef<str>>(items: &[S]) -> String {
    items.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n\n")
}

/// True when `text` splits into at least two sub-tasks without any repair.
pub fn is_well_formed_decomposition(text: &str) -> bool {
    let s = split_blank_lines(text);
    s.items.len() >= 2 && s.is_canonical()
}

/// A response split around its single fenced code block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeAndDoc {
    /// Info string after the opening fence, e.g. `python`.
    pub language: String,
    pub code: String,
    pub documentation: String,
}

fn fence_lines(text: &str) -> Vec<usize> {
    text.split('\n')
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with("```"))
        .map(|(i, _)| i)
        .collect()
}

/// Splits `text` into exactly one fenced code block and the surrounding
/// documentation.
pub fn split_code_block(text: &str) -> Result<CodeAndDoc> {
    let text = text.replace("\r\n", "\n");
    let fences = fence_lines(&text);
    match fences.len() {
        0 => return Err(Error::format("response has no fenced code block", text)),
        2 => {}
        n if n % 2 == 1 => return Err(Error::format("response has an unterminated code fence", text)),
        _ => return Err(Error::format("response has more than one fenced code block", text)),
    }
    let lines: Vec<&str> = text.split('\n').collect();
    let (open, close) = (fences[0], fences[1]);
    let language = lines[open].trim_start().trim_start_matches('`').trim().to_string();
    let code = lines[open + 1..close].join("\n");
    let before = lines[..open].join("\n");
    let after = lines[close + 1..].join("\n");
    let documentation = match (before.trim().is_empty(), after.trim().is_empty()) {
        (true, _) => after.trim().to_string(),
        (false, true) => before.trim().to_string(),
        (false, false) => format!("{}\n\n{}", before.trim(), after.trim()),
    };
    Ok(CodeAndDoc {
        language,
        code,
        documentation,
    })
}

/// `code` in a fence tagged `language`, followed by `documentation`.
pub fn render_code_block(language: &str, code: &str, documentation: &str) -> String {
    let mut s = format!("```{language}\n{code}\n```");
    if !documentation.is_empty() {
        s.push('\n');
        s.push_str(documentation);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_split() {
        let s = split_blank_lines("A\n\nB");
        assert_eq!(s.items, ["A", "B"]);
        assert!(s.is_canonical());
        assert_eq!(join_blank_lines(&s.items), "A\n\nB");
    }

    #[test]
    fn extra_blank_lines_are_normalized_with_a_note() {
        let s = split_blank_lines("A\n\n\nB");
        assert_eq!(s.items, ["A", "B"]);
        assert_eq!(s.notes.len(), 1);
        let s = split_blank_lines("\nA\n  \nB\n\n");
        assert_eq!(s.items, ["A", "B"]);
        assert!(!s.is_canonical());
    }

    #[test]
    fn multi_line_items_stay_together() {
        let s = split_blank_lines("step 1\nmore\n\nstep 2\n");
        assert_eq!(s.items, ["step 1\nmore", "step 2"]);
        assert!(s.is_canonical());
    }

    #[test]
    fn well_formedness() {
        assert!(is_well_formed_decomposition("A\n\nB"));
        assert!(!is_well_formed_decomposition("AB"));
        assert!(!is_well_formed_decomposition("A\n\n\nB"));
        assert!(!is_well_formed_decomposition(""));
    }

    #[test]
    fn fenced_split() {
        let c = split_code_block("Intro.\n```python\nx = 1\ny = 2\n```\nReturns y.").unwrap();
        assert_eq!(c.language, "python");
        assert_eq!(c.code, "x = 1\ny = 2");
        assert_eq!(c.documentation, "Intro.\n\nReturns y.");
        let r = render_code_block("python", "x = 1", "Doc.");
        let back = split_code_block(&r).unwrap();
        assert_eq!((back.code.as_str(), back.documentation.as_str()), ("x = 1", "Doc."));
    }

    #[test]
    fn fence_count_is_strict() {
        assert!(matches!(split_code_block("no code"), Err(Error::Format { .. })));
        assert!(split_code_block("```\na\n```\n```\nb\n```").is_err());
        assert!(split_code_block("```\na\n").is_err());
    }
}
