//! Training engine for feedforward networks whose architecture is mutated
//! while they train.
//!
//! Starting from a small seed topology, the engine periodically grows the
//! filters and neurons with the highest first-order saliency (accumulated
//! `|gradient * weight|`), maps dimensions in the adjacent layer so the data
//! flow stays consistent, and, once training accuracy crosses a threshold,
//! repeatedly zeroes the lowest-saliency weights and removes units that have
//! gone sparse. The result is a compact structured model trained without ever
//! instantiating the full-size baseline.
//!
//! Core math is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the training pipeline and the on-disk formats use the
//! single-precision aliases exported at the crate root.

pub mod accounting;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod events;
pub mod gradcheck;
pub mod growth;
pub mod network;
pub mod ops;
pub mod pruning;
pub mod saliency;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor used by the training pipeline and file formats.
pub type Tensor32 = tensor::Tensor<f32>;
/// Single-precision network topology.
pub type Network32 = network::NetworkTopology<f32>;
/// Single-precision saliency tables.
pub type Tables32 = saliency::SaliencyTables<f32>;
