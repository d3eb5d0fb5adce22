//! Matrix-free Gaussian-process regression with posterior sampling over the
//! covariance parameters.
//!
//! The covariance `σ·exp(−τ‖xi − xj‖²) + λ·δij` is only ever applied through
//! products ([`kernel`]). Linear systems are solved by conjugate gradients
//! ([`solvers`]) or by the unbiased early-stopped variant ([`ulisse`]), which
//! feeds unbiased gradients of the log-marginal likelihood ([`gradients`]) into
//! stochastic gradient Langevin dynamics ([`samplers`]). A dense Cholesky path
//! and a Metropolis–Hastings sampler serve as the exact baseline.

pub mod diagnostics;
pub mod error;
pub mod gradients;
pub mod kernel;
pub mod linalg3;
pub mod predictive;
pub mod rng;
pub mod samplers;
pub mod solvers;
pub mod synthetic;
pub mod ulisse;
pub mod workbench;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorCategory, Result};
pub use kernel::{Dataset, DerivativeSelector, HyperParams, Precision, Scaler};
pub use rng::RngStream;
