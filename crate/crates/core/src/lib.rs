//! Finite-sample semiparametric profile quasi-likelihood inference.
//!
//! The crate is organised bottom-up:
//!
//! * [`infogeom`] dense symmetric kernels and the target/nuisance block
//!   geometry (Schur complement, efficient score, identifiability).
//! * [`model`] the quasi-likelihood contract and the built-in models.
//! * [`estimator`] full, constrained and profile maximum likelihood.
//! * [`brackets`] bracketing matrices, excess terms, error magnitudes,
//!   spread and concentration checks.
//! * [`deviation`] deviation bounds for quadratic forms of sub-Gaussian
//!   vectors and the large-deviation radius rules.
//! * [`experiments`] seeded, parallel Monte Carlo studies.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brackets;
pub mod deviation;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod infogeom;
pub mod model;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use infogeom::{BlockInfoPair, SymMatrix};
pub use model::{ParamVector, QuasiLikelihoodModel};

/// Library version echoed into experiment summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
