//! Training and evaluation engine for categorical concept invariant
//! learning (CCIL) on windowed wearable-sensor time series.
//!
//! The crate trains a small convolutional classifier under a cross-entropy
//! plus concept-matrix-similarity objective and evaluates generalization to
//! held-out domains under four cross-domain protocols. Everything is f64,
//! deterministic, and hand-differentiated; a finite-difference checker
//! verifies every backward path.

pub mod checkpoint;
pub mod concept;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
