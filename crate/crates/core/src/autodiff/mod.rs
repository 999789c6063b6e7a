//! Minimal dense-tensor reverse-mode differentiation engine.
//!
//! The engine records primitive applications on a [`Tape`] during the
//! forward pass and replays them in reverse to accumulate gradients.
//! Everything is 64-bit: gradient checking at 1e-4 tolerance is unreliable
//! in 32-bit, and the graphs built here are desk-scale. Graph sparsity is
//! expressed through gather/scatter row primitives rather than sparse
//! matrices, which keeps the primitive set small enough to verify
//! exhaustively against finite differences.

mod adam;
mod grad_check;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use grad_check::{check_gradient, relative_error};
pub use tape::{GradientMap, NodeId, Tape};
pub use tensor::{stable_softmax, Tensor};
