//! Differentiable numerical core: tensors, a reverse-mode tape that supports
//! differentiating through gradients, and Adam.

mod adam;
mod error;
pub mod gradcheck;
pub mod ops;
mod primitive;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use primitive::{apply_primitive, Primitive};
pub use tensor::{gradients, Op, Tape, Tensor, NO_SOURCE};
