//! Bayesian paid-incurred-claims (PIC) reserving.
//!
//! Models I to IV of the PIC family (independent lognormal, Gaussian copula
//! with inverse-Wishart covariance, telescoping block covariance, and the
//! data-augmented mixture Archimedean copula), exact conjugate Gibbs
//! blocks, Euclidean and SPD-manifold adaptive Metropolis samplers,
//! convergence diagnostics and predictive reserve distributions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conjugate;
pub mod config;
pub mod copula;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod reserving;
pub mod run;
pub mod sampler;
pub mod simulate;
pub mod triangle;

pub use error::{Error, Result};
pub use linalg::SpdMatrix;
pub use triangle::{ClaimsTriangle, LogDevelopmentRatios, PermutationPlan, Source};
