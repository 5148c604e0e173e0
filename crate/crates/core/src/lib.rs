//! Ensemble classifier that tests, on each of many randomly chosen feature
//! subspaces, whether a sample is positively associated with each class
//! (one-sided Fisher's exact test), then merges the per-subspace p-values
//! into one consensus p-value per class via ordered-p-value meta-analysis.
//!
//! The consensus p-values drive three prediction modes:
//!
//! * regular classification: pick the class with the smallest p-value;
//! * conformal-style output: report every class p-value;
//! * selective classification: threshold at a significance level, yielding
//!   a single label, a refined label set, or a reject decision.
//!
//! The numeric kernels in [`stats`] are generic over the floating-point
//! scalar; the rest of the pipeline uses the crate-level [`Real`] alias.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod predict;
pub mod scalar;
pub mod stats;
pub mod streams;
pub mod subspace;

pub use error::{Error, Result};

/// Scalar type used by the classification pipeline.
pub type Real = f64;

/// Log-factorial table instantiated at the pipeline scalar.
pub type LnFactorials = stats::LogFactorials<Real>;
