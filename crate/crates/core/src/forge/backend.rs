//! Text generators behind the forge: a seeded template stub, a remote HTTP
//! client, and recording/replay wrappers for golden transcripts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::{self, Role};
use crate::error::{Error, Result};
use crate::seed::stream_seed;

pub const ENDPOINT_ENV: &str = "GPIOT_BACKEND_URL";
pub const TOKEN_ENV: &str = "GPIOT_BACKEND_TOKEN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String>;
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for &T {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        (**self).generate(prompt, params)
    }
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Box<T> {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        (**self).generate(prompt, params)
    }
}

/// Calls `backend` up to `max_attempts` times; only backend errors are
/// retried.
pub fn generate_with_retries(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    params: &GenerationParams,
    max_attempts: usize,
) -> Result<String> {
    let max_attempts = max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=max_attempts {
        match backend.generate(prompt, params) {
            Ok(t) => return Ok(t),
            Err(Error::Backend { message, .. }) => {
                log::warn!("backend attempt {attempt}/{max_attempts} failed: {message}");
                last = message;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Backend {
        message: last,
        attempts: max_attempts,
    })
}

/// Template-driven generator. Output depends only on the prompt, the stub
/// seed and `params.seed`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DeterministicStub {
    pub seed: u64,
}

const VERBS: [&str; 4] = ["Implement", "Write", "Build", "Code"];
const MODALITIES: [&str; 6] = ["IMU", "ECG", "PPG", "WiFi CSI", "acoustic", "mmWave radar"];
const REPRESENTATIONS: [&str; 4] = [
    "raw time-series samples",
    "short-time Fourier spectrograms",
    "fixed-length feature vectors",
    "compressed CSV logs",
];
const RESOURCES: [&str; 4] = [
    "a microcontroller with 256 KB of RAM",
    "a smartphone running on battery",
    "a Raspberry Pi without a GPU",
    "an edge gateway with a GPU",
];

impl DeterministicStub {
    pub fn new(seed: u64) -> Self {
        DeterministicStub { seed }
    }

    fn pick<'a>(&self, prompt: &str, params: &GenerationParams, salt: &str, options: &[&'a str]) -> &'a str {
        let h = stream_seed(self.seed ^ params.seed.rotate_left(17), &format!("{salt}\u{0}{prompt}"));
        options[(h % options.len() as u64) as usize]
    }

    fn modules(body: &str, title: &str) -> String {
        let mut blocks = Vec::new();
        let mut current: Option<(String, Vec<String>)> = None;
        for line in body.lines() {
            if let Some(h) = line.strip_prefix("## ") {
                if let Some(b) = current.take() {
                    blocks.push(b);
                }
                current = Some((h.trim().to_string(), Vec::new()));
            } else if let Some((_, text)) = current.as_mut() {
                if !line.trim().is_empty() && !line.starts_with('#') {
                    text.push(line.trim().to_string());
                }
            }
        }
        blocks.extend(current);
        let blocks: Vec<(String, String)> = blocks
            .into_iter()
            .map(|(n, t)| (n, t.join(" ")))
            .filter(|(n, t)| !n.is_empty() && !t.is_empty())
            .collect();
        if blocks.is_empty() {
            let prose: Vec<&str> = body.lines().filter(|l| !l.trim_start().starts_with('#')).collect();
            let first = sentences(&prose.join("\n")).into_iter().next().unwrap_or_default();
            if title.trim().is_empty() || first.is_empty() {
                return prompts::NO_MODULES.to_string();
            }
            return format!("Module: {}\nDescription: {first}", title.trim());
        }
        blocks
            .iter()
            .map(|(n, t)| format!("Module: {n}\nDescription: {t}"))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn decompose(&self, statement: &str, params: &GenerationParams) -> String {
        let verb = self.pick(statement, params, "verb", &VERBS);
        let mut steps: Vec<String> = sentences(statement)
            .iter()
            .map(|s| format!("{verb} code to {}.", lower_first(s.trim_end_matches('.'))))
            .collect();
        steps.insert(0, "Load and validate the input data.".to_string());
        if steps.len() < 3 {
            steps.push("Report the results.".to_string());
        }
        steps.join("\n\n")
    }

    fn augment(&self, role: Role, statement: &str, params: &GenerationParams) -> String {
        let s = statement.trim().trim_end_matches('.');
        match role {
            Role::AugmentModality => {
                let target = self.pick(statement, params, "modality", &MODALITIES);
                let mut out = s.to_string();
                let mut replaced = false;
                for m in MODALITIES {
                    if m != target && contains_word(&out, m) {
                        out = replace_word(&out, m, target);
                        replaced = true;
                    }
                }
                if replaced {
                    format!("{out}.")
                } else {
                    format!("{out}, using {target} data.")
                }
            }
            Role::AugmentRepresentation => {
                format!("{s}, where the input arrives as {}.", self.pick(statement, params, "repr", &REPRESENTATIONS))
            }
            _ => format!("{s}, running on {}.", self.pick(statement, params, "res", &RESOURCES)),
        }
    }
}

fn contains_word(text: &str, w: &str) -> bool {
    text.match_indices(w).any(|(i, _)| is_boundary(text, i, w.len()))
}

fn is_boundary(text: &str, i: usize, len: usize) -> bool {
    let before = text[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
    let after = text[i + len..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before && after
}

fn replace_word(text: &str, from: &str, to: &str) -> String {
    let mut out = String::new();
    let mut last = 0;
    for (i, _) in text.match_indices(from) {
        if i >= last && is_boundary(text, i, from.len()) {
            out.push_str(&text[last..i]);
            out.push_str(to);
            last = i + from.len();
        }
    }
    out.push_str(&text[last..]);
    out
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) if c.clone().next().is_some_and(char::is_lowercase) || c.clone().next().is_none() => {
            f.to_lowercase().chain(c).collect()
        }
        Some(f) => std::iter::once(f).chain(c).collect(),
        None => String::new(),
    }
}

/// Sentences split on `. `, `! ` and `? `, whitespace collapsed.
pub fn sentences(text: &str) -> Vec<String> {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = Vec::new();
    let mut start = 0;
    let b = flat.as_bytes();
    for i in 0..b.len() {
        if matches!(b[i], b'.' | b'!' | b'?') && (i + 1 == b.len() || b[i + 1] == b' ') {
            let s = flat[start..=i].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = i + 1;
        }
    }
    let tail = flat[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

impl GeneratorBackend for DeterministicStub {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let (role, fields) = prompts::parse_prompt(prompt).ok_or_else(|| Error::Backend {
            message: "stub does not recognise the prompt template".into(),
            attempts: 1,
        })?;
        let f = |k: &str| fields.get(k).map(String::as_str).unwrap_or("");
        Ok(match role {
            Role::ExtractModules => DeterministicStub::modules(f("body"), f("title")),
            Role::Decompose => self.decompose(f("statement"), params),
            Role::AugmentModality | Role::AugmentRepresentation | Role::AugmentResources => {
                self.augment(role, f("statement"), params)
            }
            Role::ModuleCode => {
                let (pkg, module) = (f("package"), f("module"));
                let call = module.rsplit('.').next().unwrap_or(module);
                let code = format!("import {pkg}\n\n# Apply {module} to the samples.\nresult = {pkg}.{call}(data)");
                let doc = match sentences(f("metadata")).into_iter().next() {
                    Some(s) => format!("Calls `{module}` from `{pkg}`. {s}"),
                    None => format!("Calls `{module}` from `{pkg}`."),
                };
                crate::format::render_code_block("python", &code, &doc)
            }
            Role::ExampleSpec => {
                let target = f("title").trim();
                let target = if target.is_empty() { "Run the example" } else { target };
                format!(
                    "# Task Target\n{target}\n\n# Input Specification\n- data (array): input samples\n\n# Output Specification\n- result (array): processed output\n"
                )
            }
            Role::ExampleDoc => {
                let first = sentences(f("body")).into_iter().next().unwrap_or_default();
                format!("This example shows how to {}. {first}", lower_first(f("title").trim()))
                    .trim()
                    .to_string()
            }
        })
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    params: &'a GenerationParams,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

/// POSTs `{prompt, params}` as JSON and reads `{text}` back.
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        RemoteBackend {
            endpoint: endpoint.into(),
            token,
            timeout: Duration::from_secs(120),
        }
    }

    /// Endpoint and token from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Environment(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(RemoteBackend::new(endpoint, std::env::var(TOKEN_ENV).ok()))
    }
}

impl GeneratorBackend for RemoteBackend {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let fail = |message: String| Error::Backend { message, attempts: 1 };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = serde_json::to_string(&RemoteRequest { prompt, params })?;
        let mut resp = req
            .header("Content-Type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| fail(format!("request to {} failed: {e}", self.endpoint)))?;
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| fail(format!("malformed response body: {e}")))?;
        Ok(body.text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub params: GenerationParams,
    pub text: String,
}

/// Records every successful exchange of the wrapped backend.
pub struct RecordingBackend<B> {
    pub inner: B,
    log: Mutex<Vec<Exchange>>,
}

impl<B: GeneratorBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Exchanges sorted by prompt, so concurrent runs record the same file.
    pub fn transcript(&self) -> Vec<Exchange> {
        let mut v = self.log.lock().expect("transcript lock").clone();
        v.sort_by(|a, b| a.prompt.cmp(&b.prompt).then(a.params.seed.cmp(&b.params.seed)));
        v.dedup();
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for e in self.transcript() {
            s.push_str(&serde_json::to_string(&e)?);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(Error::at_path(path))
    }
}

impl<B: GeneratorBackend> GeneratorBackend for RecordingBackend<B> {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let text = self.inner.generate(prompt, params)?;
        self.log.lock().expect("transcript lock").push(Exchange {
            prompt: prompt.to_string(),
            params: params.clone(),
            text: text.clone(),
        });
        Ok(text)
    }
}

/// Answers from a recorded transcript; unknown prompts are backend errors.
#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    answers: BTreeMap<(String, u64), String>,
}

impl ReplayBackend {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayBackend {
            answers: exchanges.into_iter().map(|e| ((e.prompt, e.params.seed), e.text)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            v.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(ReplayBackend::new(v))
    }
}

impl GeneratorBackend for ReplayBackend {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        self.answers.get(&(prompt.to_string(), params.seed)).cloned().ok_or_else(|| Error::Backend {
            message: "prompt not present in the transcript".into(),
            attempts: 1,
        })
    }
}

/// Closure-backed generator for tests and fault injection.
pub struct FnBackend<F>(pub F);

impl<F: Fn(&str, &GenerationParams) -> Result<String> + Send + Sync> GeneratorBackend for FnBackend<F> {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        (self.0)(prompt, params)
    }
}
