//! Posterior samplers over `ψ = log(σ, τ, λ)`: preconditioned SGLD driven by
//! unbiased gradients, a random-walk Metropolis–Hastings baseline, and the MAP
//! and Hessian estimates that supply the SGLD preconditioner.

mod chain;
mod map;
mod mh;
mod sgld;

pub use chain::{SampleChain, VarianceBatch};
pub use map::{
    estimate_preconditioner, hessian_preconditioner, map_estimate, map_estimate_with, MapOptions, MapResult,
    PreconditionerEstimate, HESSIAN_STEP,
};
pub use mh::{mh_sample, MhConfig};
pub use sgld::{
    dispersed_init, run_sgld, run_sgld_into, sgld_step, ChainFailure, GradientMode, Preconditioner, SgldConfig,
    StepSchedule,
};
