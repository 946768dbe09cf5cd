//! Reverse-mode automatic differentiation over dense `f64` matrices and
//! the Adam optimizer.

pub mod linalg;
mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, Adam, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use tape::{acyclicity_penalty, acyclicity_value, Axis, Gradients, Reduce, Tape, Unary, Var};
pub use tensor::Tensor;
