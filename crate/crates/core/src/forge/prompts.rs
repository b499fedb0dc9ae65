//! Prompt templates sent to the generator backend.
//!
//! Every prompt is a role line, an instruction and named fields:
//!
//! ```text
//! [role: decompose]
//! <instruction>
//!
//! <<<statement>>>
//! <value>
//! ```

use std::collections::BTreeMap;

/// Answer meaning "this paper proposes no system".
pub const NO_MODULES: &str = "NONE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    ExtractModules,
    Decompose,
    AugmentModality,
    AugmentRepresentation,
    AugmentResources,
    ModuleCode,
    ExampleSpec,
    ExampleDoc,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::ExtractModules,
        Role::Decompose,
        Role::AugmentModality,
        Role::AugmentRepresentation,
        Role::AugmentResources,
        Role::ModuleCode,
        Role::ExampleSpec,
        Role::ExampleDoc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Role::ExtractModules => "extract-modules",
            Role::Decompose => "decompose",
            Role::AugmentModality => "augment-modality",
            Role::AugmentRepresentation => "augment-representation",
            Role::AugmentResources => "augment-resources",
            Role::ModuleCode => "module-code",
            Role::ExampleSpec => "example-spec",
            Role::ExampleDoc => "example-doc",
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            Role::ExtractModules => {
                "You are an IoT research assistant. Read the paper below and split the system it proposes \
into its technical modules. Answer with one block per module: a line `Module: <name>` and then a line \
`Description: <one paragraph>`. Separate blocks with one blank line. Answer `NONE` if the paper proposes no system."
            }
            Role::Decompose => {
                "You are an embedded software engineer. Break the problem below into sub-tasks, each with \
concrete implementation steps. Separate consecutive sub-tasks with exactly one blank line and keep every \
sub-task free of blank lines."
            }
            Role::AugmentModality => {
                "Rewrite the IoT problem below so that it works on a different sensor modality. Keep the goal \
and reply with the rewritten problem only."
            }
            Role::AugmentRepresentation => {
                "Rewrite the IoT problem below so that its input data comes in a different representation. \
Keep the goal and reply with the rewritten problem only."
            }
            Role::AugmentResources => {
                "Rewrite the IoT problem below for a device with a different compute, memory or energy budget. \
Keep the goal and reply with the rewritten problem only."
            }
            Role::ModuleCode => {
                "Using the module documentation below, write a short commented Python example. Reply with \
exactly one fenced code block followed by its documentation."
            }
            Role::ExampleSpec => {
                "Summarize the example below as a task specification with the headings `# Task Target`, \
`# Input Specification` and `# Output Specification`."
            }
            Role::ExampleDoc => "Write short user documentation for the example below.",
        }
    }
}

fn header(role: Role) -> String {
    format!("[role: {}]", role.tag())
}

/// Builds the prompt for `role` with `fields` in the given order.
pub fn render(role: Role, fields: &[(&str, &str)]) -> String {
    let mut s = format!("{}\n{}\n", header(role), role.instruction());
    for (k, v) in fields {
        s.push_str(&format!("\n<<<{k}>>>\n{v}\n"));
    }
    s
}

/// Inverse of [`render`]; `None` for prompts not built from a template.
pub fn parse_prompt(prompt: &str) -> Option<(Role, BTreeMap<String, String>)> {
    let first = prompt.lines().next()?;
    let role = Role::ALL.into_iter().find(|r| first == header(*r))?;
    let mut fields = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in prompt.lines().skip(1) {
        if let Some(name) = line.strip_prefix("<<<").and_then(|l| l.strip_suffix(">>>")) {
            if let Some((k, v)) = current.take() {
                fields.insert(k, field_value(&v));
            }
            current = Some((name.to_string(), Vec::new()));
        } else if let Some((_, v)) = current.as_mut() {
            v.push(line);
        }
    }
    if let Some((k, v)) = current {
        fields.insert(k, field_value(&v));
    }
    Some((role, fields))
}

fn field_value(lines: &[&str]) -> String {
    // The blank line before the next marker belongs to the layout.
    let mut v = lines.to_vec();
    if v.last() == Some(&"") {
        v.pop();
    }
    v.join("\n")
}

pub fn extract_modules(title: &str, body: &str) -> String {
    render(Role::ExtractModules, &[("title", title), ("body", body)])
}

pub fn decompose(statement: &str) -> String {
    render(Role::Decompose, &[("statement", statement)])
}

pub fn augment(role: Role, statement: &str, variant: usize) -> String {
    render(role, &[("variant", &variant.to_string()), ("statement", statement)])
}

pub fn module_code(package: &str, module: &str, metadata: &str) -> String {
    render(Role::ModuleCode, &[("package", package), ("module", module), ("metadata", metadata)])
}

pub fn example_spec(title: &str, body: &str) -> String {
    render(Role::ExampleSpec, &[("title", title), ("body", body)])
}

pub fn example_doc(title: &str, body: &str) -> String {
    render(Role::ExampleDoc, &[("title", title), ("body", body)])
}

/// Dataset prompt of a module-description record.
pub fn describe_module_task(package: &str, module: &str) -> String {
    format!("Describe the `{module}` module of the `{package}` package in detail.")
}

/// Dataset prompt of a module-implementation record.
pub fn implement_module_task(package: &str, module: &str) -> String {
    format!("Write a commented Python example that uses `{module}` from `{package}` and document it.")
}
