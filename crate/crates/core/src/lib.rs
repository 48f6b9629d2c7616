//! Desk-scale benchmark framework for unstructured neural-network pruning.
//!
//! The crate is organised the way an experiment flows:
//!
//! * [`autograd`] holds the dense tensor type, the layer primitives and their
//!   vector-Jacobian products.
//! * [`model`] defines the reference architectures, masked parameters and
//!   checkpoints.
//! * [`data`] loads IDX / CIFAR-10 binaries or generates synthetic blobs and
//!   streams deterministic minibatches.
//! * [`prune`] scores weights, selects masks and drives prune / fine-tune
//!   iterations.
//! * [`train`] contains the optimizers, early stopping and evaluation.
//! * [`metrics`] does size and multiply-add accounting plus top-k accuracy.
//! * [`harness`] runs multi-seed experiments, writes results and curves and
//!   lints result sets against the evaluation checklist.
//! * [`meta`] normalizes literature-reported results.

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod prune;
pub mod seed;
pub mod train;

pub use autograd::{Precision, Real, Tensor};
pub use error::{Error, Result};
pub use model::{ArchId, ModelGraph, ParamTensor};
pub use prune::{PruneAction, Strategy};

pub use seed::SeedLineage;
