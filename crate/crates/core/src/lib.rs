//! Volterra multimodal subspace clustering.
//!
//! Per-modality second-order Volterra encoders feed a shared
//! self-expressive layer whose coefficients become a sample affinity for
//! spectral clustering. The coefficient layer may be dense, randomly
//! pruned, or factored into cyclic sparsely connected (CSC) layers.

pub mod cluster;
pub mod csc;
pub mod data;
mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod selfexpr;
pub mod train;
pub mod volterra;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
