//! Construction of the decomposition (TDD) and code-generation (CGD) tuning
//! datasets from a local corpus through a pluggable generator.

pub mod backend;
pub mod build;
pub mod corpus;
pub mod prompts;
pub mod records;

pub use backend::{
    generate_with_retries, DeterministicStub, Exchange, FnBackend, GenerationParams, GeneratorBackend,
    RecordingBackend, RemoteBackend, ReplayBackend,
};
pub use build::{
    parse_modules, AugmentOutcome, Decomposition, Forge, ForgeOptions, ForgeOutput, ReviewItem, TechnicalModule,
};
pub use corpus::{classify, ingest_corpus, ingest_tagged, strip_html, DocKind, Document, TaggedDocument};
pub use records::{
    parse_dataset, read_dataset, serialize_dataset, write_dataset, AugmentationAxis, CgdRecord, CgdVariant,
    DatasetRecord, Provenance, TddRecord,
};

#[cfg(test)]
mod tests;
