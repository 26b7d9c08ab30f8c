//! Probabilistic box embeddings.
//!
//! Entities are represented as axis-aligned boxes (products of closed
//! intervals). The crate provides:
//!
//! * [`diff`] — a small define-by-run reverse-mode differentiation tape;
//! * [`boxes`] — box values and the four parameterizations from free
//!   parameters to `(z, Z)` corners;
//! * [`ops`] — hard and Gumbel intersection, log-space volumes, pooling,
//!   regularizers and the conditional containment probability;
//! * [`embedding`] — entity tables with uniform initialization and sparse
//!   gradients;
//! * [`graph`] — hierarchy ingestion, transitive closure/reduction, splits,
//!   synthetic trees and F1 scoring;
//! * [`train`] — losses, negative sampling, SGD/lazy Adam and the trainer;
//! * [`config`] / [`cli`] — the JSON run configuration and command runner.

// `!(x > 0.0)` is used deliberately throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boxes;
pub mod cli;
pub mod config;
pub mod diff;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod ops;
pub mod rng;
pub mod train;

pub use boxes::{realize, BoxTensor, ParamKind};
pub use embedding::{EmbeddingTable, InitSpec};
pub use error::{Error, Result};
pub use ops::{IntersectionKind, OpsConfig, VolumeKind};
