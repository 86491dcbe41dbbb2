//! Sparse orthogonal factor regression (SOFAR).
//!
//! Estimates a coefficient matrix `C = U D Vᵀ` for the multivariate model
//! `Y = X C + E` whose singular vectors are simultaneously sparse and exactly
//! orthonormal. The estimator is fitted by an augmented Lagrangian scheme with
//! block coordinate descent, started from the SVD of a cross-validated
//! entrywise Lasso fit.

pub mod error;
pub mod linalg;

pub use error::{Result, SofarError};
pub use linalg::Mat;
pub mod lasso_init;
pub mod penalty;
pub mod simgen;
pub mod solver;
pub mod apps;
pub mod metrics;
pub mod tuning;
pub mod simulate;
pub mod theory;
