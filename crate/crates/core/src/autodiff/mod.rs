//! Minimal reverse-mode automatic differentiation over dense `f64`
//! tensors. Only the operators the encoder, the contrastive loss and the
//! probe need are provided.

mod adam;
pub mod checkpoint;
mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::DiffTensor;
