//! Continuous sequence-to-sequence modeling with hierarchical state-space
//! models.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff engine
//! ([`ndgrad`]), sequence layers (diagonal and selective state-space models,
//! LSTM, causal attention) in [`layers`], two-level chunked composition in
//! [`hierarchy`], signal preprocessing in [`preprocess`], synthetic task
//! generation and dataset files in [`data`], training in [`train`], and
//! evaluation, scaling benchmarks and ablations in [`evalbench`].
//!
//! The numeric core is generic over [`scalar::Scalar`]; everything above it
//! uses the concrete [`Real`] (= f64) aliases below.

pub mod data;
pub mod error;
pub mod evalbench;
pub mod hierarchy;
pub mod layers;
pub mod ndgrad;
pub mod preprocess;
pub mod scalar;
pub mod seq;
pub mod train;

pub use error::{Error, Result};

/// Scalar type used throughout the modeling stack.
pub type Real = f64;
/// Tensor over [`Real`].
pub type Tensor = ndgrad::Tensor<Real>;
/// Recording graph over [`Real`].
pub type Graph = ndgrad::Graph<Real>;
/// Leaf gradients over [`Real`].
pub type GradMap = ndgrad::GradMap<Real>;
