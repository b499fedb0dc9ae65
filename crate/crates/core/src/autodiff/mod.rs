//! Dense `f64` tensors with reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use ops::{cross_entropy, layer_norm, softmax_rows, swiglu};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
