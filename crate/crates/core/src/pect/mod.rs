//! Two-path LoRA adapters with shared key/value adapters and cross-path
//! projection layers.

pub mod adapters;
pub mod checkpoint;
pub mod count;
pub mod forward;
pub mod lora;
pub mod merge;
pub mod model;

pub use adapters::{ForwardMode, PathId, PectAdapters, PectBlockParams, PectConfig, ProjectionLayer};
pub use checkpoint::{load_adapters, save_adapters, AdapterCheckpoint};
pub use count::{count_trainable, ParamCount};
pub use forward::{pect_block_forward, pect_kv, pect_model_forward, PectVars};
pub use lora::{lora_delta, ForwardContext, LoraAdapter};
pub use merge::merge_path_adapters;
pub use model::{PathModel, PathView, PectModel};
