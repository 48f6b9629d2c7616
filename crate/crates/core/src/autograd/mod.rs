//! Dense tensors and reverse-mode differentiation for sequential models.
//!
//! Differentiation is layer-structured: every primitive in [`ops`] comes with
//! a hand-written vector-Jacobian product, and [`crate::model::ModelGraph`]
//! records each layer's inputs during `forward` so `backward` can replay the
//! chain in reverse.

pub mod ops;
mod tensor;

pub use tensor::{Precision, Real, Tensor};
