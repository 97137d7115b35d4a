//! Bayesian functional mixed membership models.
//!
//! Each of N observed sample paths is modeled as a convex combination of K
//! latent functional features, represented on a B-spline (or tensor-product)
//! basis with a shared low-rank covariance structure. The crate provides
//! synthetic data generation, full posterior inference via
//! Metropolis-within-Gibbs with optional tempered transitions and
//! multiple-start initialization, post-processing (membership rescaling,
//! covariance eigenstructure, simultaneous credible bands), and model
//! selection.

// `!(x > 0.0)` deliberately treats NaN as invalid; `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops predominate here: most iterate several matrices in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod basis;
pub mod error;
pub mod model;
pub mod orchestration;
pub mod postprocess;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod selection;
pub mod simgen;
pub mod stats;
pub mod tempering;

pub use error::{Error, Result};
