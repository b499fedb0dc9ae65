//! Dataset records and their JSONL form `{id, source, prompt, response,
//! provenance}`, one record per line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cotune::{Source, TrainSample};
use crate::error::{Error, Result};
use crate::format::{join_blank_lines, split_blank_lines, split_code_block};
use crate::transformer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationAxis {
    SensorModality,
    DataRepresentation,
    ResourceHeterogeneity,
}

impl AugmentationAxis {
    pub const ALL: [AugmentationAxis; 3] = [
        AugmentationAxis::SensorModality,
        AugmentationAxis::DataRepresentation,
        AugmentationAxis::ResourceHeterogeneity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationAxis::SensorModality => "sensor_modality",
            AugmentationAxis::DataRepresentation => "data_representation",
            AugmentationAxis::ResourceHeterogeneity => "resource_heterogeneity",
        }
    }
}

impl fmt::Display for AugmentationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation axis {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CgdVariant {
    /// Module description.
    D1,
    /// Module implementation.
    D2,
    /// Example implementation.
    D3,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source_doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<AugmentationAxis>,
    /// Id of the record an augmented record was rewritten from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<CgdVariant>,
}

/// One JSONL line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub source: Source,
    pub prompt: String,
    pub response: String,
    pub provenance: Provenance,
}

impl DatasetRecord {
    pub fn to_sample(&self, vocab: &Vocabulary) -> TrainSample {
        TrainSample::from_text(vocab, &self.prompt, &self.response, self.source)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TddRecord {
    pub id: String,
    pub problem_statement: String,
    pub subtasks: Vec<String>,
    pub provenance: Provenance,
}

impl TddRecord {
    pub fn validate(&self) -> Result<()> {
        if self.problem_statement.trim().is_empty() {
            return Err(Error::Contract(format!("{}: empty problem statement", self.id)));
        }
        if self.subtasks.is_empty() {
            return Err(Error::Contract(format!("{}: no sub-tasks", self.id)));
        }
        for t in &self.subtasks {
            if t.trim().is_empty() || t.trim() != t || t.split('\n').any(|l| l.trim().is_empty()) {
                return Err(Error::Contract(format!("{}: sub-task {t:?} is empty or contains a blank line", self.id)));
            }
        }
        Ok(())
    }

    pub fn response(&self) -> String {
        join_blank_lines(&self.subtasks)
    }

    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            id: self.id.clone(),
            source: Source::Tdd,
            prompt: self.problem_statement.clone(),
            response: self.response(),
            provenance: self.provenance.clone(),
        }
    }

    /// Inverse of [`to_record`](Self::to_record); the response must be in
    /// canonical blank-line form.
    pub fn from_record(r: &DatasetRecord) -> Result<Self> {
        if r.source != Source::Tdd {
            return Err(Error::Contract(format!("{} is not a TDD record", r.id)));
        }
        let split = split_blank_lines(&r.response);
        if !split.is_canonical() || join_blank_lines(&split.items) != r.response {
            return Err(Error::format(format!("{}: response is not in canonical blank-line form", r.id), &r.response));
        }
        let rec = TddRecord {
            id: r.id.clone(),
            problem_statement: r.prompt.clone(),
            subtasks: split.items,
            provenance: r.provenance.clone(),
        };
        rec.validate()?;
        Ok(rec)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgdRecord {
    pub id: String,
    pub variant: CgdVariant,
    pub task_specification: String,
    pub response: String,
    pub provenance: Provenance,
}

impl CgdRecord {
    pub fn validate(&self) -> Result<()> {
        if self.task_specification.trim().is_empty() {
            return Err(Error::Contract(format!("{}: empty task specification", self.id)));
        }
        if self.response.trim().is_empty() {
            return Err(Error::Contract(format!("{}: empty response", self.id)));
        }
        if self.variant != CgdVariant::D1 {
            split_code_block(&self.response)?;
        }
        if self.provenance.variant != Some(self.variant) {
            return Err(Error::Contract(format!("{}: provenance variant does not match", self.id)));
        }
        Ok(())
    }

    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            id: self.id.clone(),
            source: Source::Cgd,
            prompt: self.task_specification.clone(),
            response: self.response.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_record(r: &DatasetRecord) -> Result<Self> {
        if r.source != Source::Cgd {
            return Err(Error::Contract(format!("{} is not a CGD record", r.id)));
        }
        let variant = r
            .provenance
            .variant
            .ok_or_else(|| Error::Contract(format!("{}: CGD record without a variant", r.id)))?;
        let rec = CgdRecord {
            id: r.id.clone(),
            variant,
            task_specification: r.prompt.clone(),
            response: r.response.clone(),
            provenance: r.provenance.clone(),
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn serialize_dataset(records: &[DatasetRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Parses JSONL; blank lines are skipped, and errors carry the 1-based line.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    std::fs::write(path, serialize_dataset(records)?).map_err(Error::at_path(path))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    parse_dataset(&std::fs::read_to_string(path).map_err(Error::at_path(path))?)
}
