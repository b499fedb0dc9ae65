//! Online stage: decomposition, requirement transformation with retrieved
//! context, per-sub-task code generation and bundle assembly.

pub mod embed;
pub mod lm;
pub mod rtslm;
pub mod run;
pub mod spec;
pub mod stages;

pub use embed::{cosine, Embedder, EmbeddingIndex, HashingTfIdf, Retrieved, DEFAULT_EMBED_DIM, DEFAULT_RETRIEVAL_K};
pub use lm::{adapted_lm, base_lm, AdaptedLm, BaseLm, FnLm, LanguageModel, ModelRole, ScriptedLm, TokenLm};
pub use rtslm::RuleBasedRtslm;
pub use run::{
    run_pipeline, write_bundle, BundleManifest, PipelineFailure, PipelineModels, PipelineOptions, PipelineResult,
    SubtaskResult,
};
pub use spec::{ParamSpec, TaskSpecification};
pub use stages::{decompose_problem, generate_code, transform_requirement, Stage, Transcript};
