//! The frozen foundation model shared by every role.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod model;
pub mod tokenizer;
pub mod weights;

pub use checkpoint::{load_model, save_model, ModelCheckpoint};
pub use config::ModelConfig;
pub use decode::{decode, DecodeMode};
pub use model::{NextTokenModel, TransformerModel};
pub use tokenizer::{TokenSequence, Vocabulary, BOS, EOS, SEP};
pub use weights::{BaseWeights, BlockWeights, InitScales, SwiGluWeights};
