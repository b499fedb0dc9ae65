//! Dataset construction: modules and decompositions from papers, their
//! augmented rewrites, and the three code-dataset variants from package docs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{generate_with_retries, GenerationParams, GeneratorBackend};
use super::corpus::{ingest_tagged, DocKind, Document, TaggedDocument};
use super::prompts::{self, Role, NO_MODULES};
use super::records::{
    serialize_dataset, AugmentationAxis, CgdRecord, CgdVariant, DatasetRecord, Provenance, TddRecord,
};
use crate::error::{Error, Result};
use crate::format::{render_code_block, split_blank_lines, split_code_block};
use crate::pipeline::TaskSpecification;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechnicalModule {
    pub name: String,
    pub description: String,
    pub source_doc: String,
}

/// A generated item the automatic validator rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub stage: String,
    pub reason: String,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeOptions {
    /// Rewrites per axis per statement.
    pub fanout: usize,
    pub axes: Vec<AugmentationAxis>,
    pub max_attempts: usize,
    /// Concurrent backend calls.
    pub parallelism: usize,
    pub params: GenerationParams,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        ForgeOptions {
            fanout: 1,
            axes: AugmentationAxis::ALL.to_vec(),
            max_attempts: 3,
            parallelism: 1,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForgeOutput {
    pub tdd: Vec<TddRecord>,
    pub cgd: Vec<CgdRecord>,
    pub review: Vec<ReviewItem>,
}

impl ForgeOutput {
    pub fn tdd_records(&self) -> Vec<DatasetRecord> {
        self.tdd.iter().map(TddRecord::to_record).collect()
    }

    pub fn cgd_records(&self) -> Vec<DatasetRecord> {
        self.cgd.iter().map(CgdRecord::to_record).collect()
    }

    /// Writes `tdd.jsonl`, `cgd.jsonl` and `review_queue.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(Error::at_path(&p))
        };
        write("tdd.jsonl", serialize_dataset(&self.tdd_records())?)?;
        write("cgd.jsonl", serialize_dataset(&self.cgd_records())?)?;
        let mut review = String::new();
        for r in &self.review {
            review.push_str(&serde_json::to_string(r)?);
            review.push('\n');
        }
        write("review_queue.jsonl", review)
    }
}

/// Blank-line split output with the repairs that were applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub record: TddRecord,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub accepted: Vec<TddRecord>,
    pub rejected: Vec<ReviewItem>,
}

pub fn slug(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

/// Parses `Module:` / `Description:` blocks; `NONE` is an explicit empty list.
pub fn parse_modules(text: &str, source_doc: &str) -> Result<Vec<TechnicalModule>> {
    if text.trim() == NO_MODULES {
        return Ok(Vec::new());
    }
    let split = split_blank_lines(text);
    if split.items.is_empty() {
        return Err(Error::format("module list is empty", text));
    }
    let mut out = Vec::new();
    for block in &split.items {
        let mut name = None;
        let mut desc: Option<Vec<&str>> = None;
        for line in block.lines() {
            if let Some(n) = line.strip_prefix("Module:") {
                name = Some(n.trim());
            } else if let Some(d) = line.strip_prefix("Description:") {
                desc = Some(vec![d.trim()]);
            } else if let Some(d) = desc.as_mut() {
                d.push(line.trim());
            } else {
                return Err(Error::format(format!("unexpected line {line:?} in module block"), text));
            }
        }
        match (name, desc) {
            (Some(n), Some(d)) if !n.is_empty() && !d.join(" ").trim().is_empty() => out.push(TechnicalModule {
                name: n.to_string(),
                description: d.join(" ").trim().to_string(),
                source_doc: source_doc.to_string(),
            }),
            _ => return Err(Error::format("module block needs a name and a description", text)),
        }
    }
    Ok(out)
}

/// First fenced block of `text` and its info string.
pub fn first_code_block(text: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = text.lines().collect();
    let open = lines.iter().position(|l| l.trim_start().starts_with("```"))?;
    let close = open + 1 + lines[open + 1..].iter().position(|l| l.trim_start().starts_with("```"))?;
    let lang = lines[open].trim_start().trim_start_matches('`').trim();
    Some((
        if lang.is_empty() { "python".into() } else { lang.to_string() },
        lines[open + 1..close].join("\n"),
    ))
}

fn clean_subtasks(items: Vec<String>) -> Vec<String> {
    items
        .into_iter()
        .map(|t| t.lines().map(str::trim_end).collect::<Vec<_>>().join("\n").trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn axis_role(axis: AugmentationAxis) -> Role {
    match axis {
        AugmentationAxis::SensorModality => Role::AugmentModality,
        AugmentationAxis::DataRepresentation => Role::AugmentRepresentation,
        AugmentationAxis::ResourceHeterogeneity => Role::AugmentResources,
    }
}

pub struct Forge<'b> {
    pub backend: &'b dyn GeneratorBackend,
    pub options: ForgeOptions,
}

impl<'b> Forge<'b> {
    pub fn new(backend: &'b dyn GeneratorBackend, options: ForgeOptions) -> Self {
        Forge { backend, options }
    }

    fn call(&self, prompt: &str) -> Result<String> {
        generate_with_retries(self.backend, prompt, &self.options.params, self.options.max_attempts)
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.options.parallelism.max(1))
            .build()
            .map_err(|e| Error::Environment(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }

    pub fn extract_modules(&self, doc: &Document) -> Result<Vec<TechnicalModule>> {
        let out = self.call(&prompts::extract_modules(&doc.title, &doc.body))?;
        parse_modules(&out, &doc.id)
    }

    /// Problem statement a module is turned into.
    pub fn module_statement(module: &TechnicalModule) -> String {
        format!("{}: {}", module.name, module.description)
    }

    fn decompose_statement(&self, statement: &str) -> Result<(Vec<String>, Vec<String>, String)> {
        let raw = self.call(&prompts::decompose(statement))?;
        let split = split_blank_lines(&raw);
        let items = clean_subtasks(split.items);
        if items.is_empty() {
            return Err(Error::format("decomposition has no sub-tasks", raw));
        }
        Ok((items, split.notes, raw))
    }

    pub fn decompose_module(&self, module: &TechnicalModule, id: &str) -> Result<Decomposition> {
        if module.description.trim().is_empty() {
            return Err(Error::Contract(format!("module {} has no description", module.name)));
        }
        let statement = Forge::module_statement(module);
        let (subtasks, notes, _) = self.decompose_statement(&statement)?;
        for n in &notes {
            log::info!("{id}: decomposition normalized ({n})");
        }
        let record = TddRecord {
            id: id.to_string(),
            problem_statement: statement,
            subtasks,
            provenance: Provenance {
                source_doc: module.source_doc.clone(),
                ..Provenance::default()
            },
        };
        record.validate()?;
        Ok(Decomposition { record, notes })
    }

    /// Up to `fanout` rewrites of `record` along `axis`, each decomposed
    /// afresh. Invalid generations go to the review queue.
    pub fn augment_problem(&self, record: &TddRecord, axis: AugmentationAxis) -> Result<AugmentOutcome> {
        record.validate()?;
        let mut out = AugmentOutcome::default();
        let mut seen = vec![record.problem_statement.trim().to_string()];
        for k in 0..self.options.fanout {
            let id = format!("{}-{}-{k}", record.id, axis.as_str().replace('_', "-"));
            let reject = |out: &mut AugmentOutcome, stage: &str, reason: String, raw: String| {
                log::warn!("{id}: rejected ({reason})");
                out.rejected.push(ReviewItem {
                    id: id.clone(),
                    stage: stage.into(),
                    reason,
                    raw,
                });
            };
            let raw = self.call(&prompts::augment(axis_role(axis), &record.problem_statement, k))?;
            let statement = raw.trim().to_string();
            if statement.is_empty() || statement.lines().any(|l| l.trim().is_empty()) {
                reject(&mut out, "rewrite", "rewritten statement is empty or spans paragraphs".into(), raw);
                continue;
            }
            if seen.contains(&statement) {
                reject(&mut out, "rewrite", "rewrite repeats an existing statement".into(), raw);
                continue;
            }
            seen.push(statement.clone());
            match self.decompose_statement(&statement) {
                Ok((subtasks, _, _)) => out.accepted.push(TddRecord {
                    id: id.clone(),
                    problem_statement: statement,
                    subtasks,
                    provenance: Provenance {
                        source_doc: record.provenance.source_doc.clone(),
                        axis: Some(axis),
                        parent: Some(record.id.clone()),
                        variant: None,
                    },
                }),
                Err(Error::Format { message, raw }) => reject(&mut out, "decompose", message, raw),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    fn tdd_for_paper(&self, doc: &Document) -> Result<(Vec<TddRecord>, Vec<ReviewItem>)> {
        let mut tdd = Vec::new();
        let mut review = Vec::new();
        let base = format!("tdd-{}", slug(&doc.id));
        let modules = match self.extract_modules(doc) {
            Ok(m) => m,
            Err(Error::Format { message, raw }) => {
                log::warn!("{}: module extraction rejected ({message})", doc.id);
                review.push(ReviewItem {
                    id: base,
                    stage: "extract".into(),
                    reason: message,
                    raw,
                });
                return Ok((tdd, review));
            }
            Err(e) => return Err(e),
        };
        for (i, m) in modules.iter().enumerate() {
            let id = format!("{base}-{i}");
            let d = match self.decompose_module(m, &id) {
                Ok(d) => d,
                Err(Error::Format { message, raw }) => {
                    review.push(ReviewItem {
                        id,
                        stage: "decompose".into(),
                        reason: message,
                        raw,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut augmented = Vec::new();
            for &axis in &self.options.axes {
                let o = self.augment_problem(&d.record, axis)?;
                augmented.extend(o.accepted);
                review.extend(o.rejected);
            }
            tdd.push(d.record);
            tdd.extend(augmented);
        }
        Ok((tdd, review))
    }

    /// TDD records (originals followed by their rewrites) for every paper.
    pub fn build_tdd(&self, papers: &[Document]) -> Result<(Vec<TddRecord>, Vec<ReviewItem>)> {
        let parts: Vec<Result<_>> = self.in_pool(|| papers.par_iter().map(|d| self.tdd_for_paper(d)).collect())?;
        let mut tdd = Vec::new();
        let mut review = Vec::new();
        for p in parts {
            let (t, r) = p?;
            tdd.extend(t);
            review.extend(r);
        }
        Ok((tdd, review))
    }

    fn cgd_for_doc(&self, t: &TaggedDocument) -> Result<(Vec<CgdRecord>, Vec<ReviewItem>)> {
        let doc = &t.doc;
        let mut records = Vec::new();
        let mut review = Vec::new();
        let prov = |v| Provenance {
            source_doc: doc.id.clone(),
            variant: Some(v),
            ..Provenance::default()
        };
        match &t.kind {
            Some(DocKind::ApiReference { package }) => {
                let module = doc.title.trim();
                let metadata = doc.body.trim();
                records.push(CgdRecord {
                    id: format!("cgd-d1-{}", slug(&doc.id)),
                    variant: CgdVariant::D1,
                    task_specification: prompts::describe_module_task(package, module),
                    response: metadata.to_string(),
                    provenance: prov(CgdVariant::D1),
                });
                let id = format!("cgd-d2-{}", slug(&doc.id));
                let raw = self.call(&prompts::module_code(package, module, metadata))?;
                match split_code_block(&raw) {
                    Ok(c) => records.push(CgdRecord {
                        id,
                        variant: CgdVariant::D2,
                        task_specification: prompts::implement_module_task(package, module),
                        response: render_code_block(&c.language, &c.code, &c.documentation),
                        provenance: prov(CgdVariant::D2),
                    }),
                    Err(e) => review.push(ReviewItem {
                        id,
                        stage: "module-code".into(),
                        reason: e.to_string(),
                        raw,
                    }),
                }
            }
            Some(DocKind::ExampleGallery { .. }) => {
                let id = format!("cgd-d3-{}", slug(&doc.id));
                let Some((lang, code)) = first_code_block(&doc.body) else {
                    review.push(ReviewItem {
                        id,
                        stage: "example".into(),
                        reason: "example page has no code block".into(),
                        raw: doc.body.clone(),
                    });
                    return Ok((records, review));
                };
                let raw = self.call(&prompts::example_spec(&doc.title, &doc.body))?;
                let spec = match TaskSpecification::parse(&raw) {
                    Ok(s) => s,
                    Err(e) => {
                        review.push(ReviewItem {
                            id,
                            stage: "example-spec".into(),
                            reason: e.to_string(),
                            raw,
                        });
                        return Ok((records, review));
                    }
                };
                let documentation = self.call(&prompts::example_doc(&doc.title, &doc.body))?;
                records.push(CgdRecord {
                    id,
                    variant: CgdVariant::D3,
                    task_specification: spec.render(),
                    response: render_code_block(&lang, &code, documentation.trim()),
                    provenance: prov(CgdVariant::D3),
                });
            }
            other => {
                return Err(Error::Classification {
                    path: doc.id.clone().into(),
                    reason: match other {
                        Some(DocKind::Paper) => "papers are not package documentation".into(),
                        _ => "not under packages/<name>/api or packages/<name>/gallery".into(),
                    },
                })
            }
        }
        Ok((records, review))
    }

    /// D1 and D2 records for every API page and a D3 record for every gallery
    /// page, in document order.
    pub fn build_cgd(&self, docs: &[TaggedDocument]) -> Result<(Vec<CgdRecord>, Vec<ReviewItem>)> {
        let parts: Vec<Result<_>> = self.in_pool(|| docs.par_iter().map(|d| self.cgd_for_doc(d)).collect())?;
        let mut cgd = Vec::new();
        let mut review = Vec::new();
        for p in parts {
            let (c, r) = p?;
            cgd.extend(c);
            review.extend(r);
        }
        Ok((cgd, review))
    }

    /// Runs the whole forge over a corpus directory.
    pub fn forge_corpus(&self, dir: &Path) -> Result<ForgeOutput> {
        let docs = ingest_tagged(dir)?;
        if let Some(t) = docs.iter().find(|t| t.kind.is_none()) {
            return Err(Error::Classification {
                path: dir.join(&t.doc.id),
                reason: "document is outside papers/ and packages/<name>/{api,gallery}/".into(),
            });
        }
        let (papers, packages): (Vec<_>, Vec<_>) = docs.into_iter().partition(|t| t.kind == Some(DocKind::Paper));
        let papers: Vec<Document> = papers.into_iter().map(|t| t.doc).collect();
        let (tdd, mut review) = self.build_tdd(&papers)?;
        let (cgd, r) = self.build_cgd(&packages)?;
        review.extend(r);
        Ok(ForgeOutput { tdd, cgd, review })
    }
}
