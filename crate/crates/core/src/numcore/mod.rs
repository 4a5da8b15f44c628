//! Dense `f64` tensors and a reverse-mode differentiation tape.

mod kernels;
mod tape;
mod tensor;

pub(crate) use kernels::matmul as matmul_values;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
