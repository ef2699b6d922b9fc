//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node; calling
//! [`Tape::backward`] on a scalar loss walks the nodes once in reverse
//! creation order and returns gradients for every parameter leaf. Parameters
//! live outside the tape in a [`ParamStore`], so one tape can combine leaves
//! from several stores (identified by a caller-chosen slot index) and a fresh
//! tape is built per training step.
//!
//! [`val`] holds the value-only forward kernels shared by tape ops,
//! teacher-side (gradient-stopped) computations, and evaluation code.

mod check;
mod optim;
mod tape;
mod tensor;
pub mod val;

#[cfg(test)]
mod tests;

pub use check::grad_check;
pub use optim::{AdamwConfig, ParamId, ParamStore, Parameter};
pub use tape::{GradMap, NodeId, Tape};
pub use tensor::Tensor;

/// Errors raised by tape construction and backward passes.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss node")]
    NotScalar,
    #[error("row {row} is not a probability distribution (sum {sum:.6}, min entry {min:.6})")]
    NotADistribution { row: usize, sum: f64, min: f64 },
}
