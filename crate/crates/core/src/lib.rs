//! Multi-path LoRA co-tuning on a frozen desk-scale transformer, with the
//! dataset forge, the decompose → transform → generate pipeline and the
//! benchmark harness built around it.

// `!(x > 0.0)` and friends deliberately reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod autodiff;
pub mod bench;
pub mod cotune;
pub mod error;
pub mod forge;
pub mod format;
pub mod pect;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod transformer;

pub use error::{Error, Result};
