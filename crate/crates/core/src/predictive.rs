//! Predictive distribution of a noisy label at new inputs, for one parameter
//! value or averaged over posterior samples.
//!
//! For fixed `θ` the prediction at `x*` is Gaussian with mean `k*ᵀK⁻¹y` and
//! variance `σ + λ − k*ᵀK⁻¹k*`, where `k*_i = σ exp(−τ‖x_i − x*‖²)`. The noise
//! variance `λ` is included: predictions are for labels, not the latent function.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::kernel::{Dataset, HyperParams};
use crate::samplers::SampleChain;
use crate::solvers::{cg_solve, CgConfig};

/// Cross-covariance `k*` between the training inputs and `x_star`.
pub fn cross_covariance(theta: &HyperParams, data: &Dataset, x_star: &[f64]) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let r2: f64 = data.row(i).iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
            theta.sigma() * (-theta.tau() * r2).exp()
        })
        .collect()
}

fn solver_config() -> CgConfig {
    CgConfig::with_epsilon(1e-8)
}

fn point(theta: &HyperParams, data: &Dataset, alpha: &[f64], x_star: &[f64], cfg: &CgConfig) -> Result<(f64, f64)> {
    let k = cross_covariance(theta, data, x_star);
    let mean = k.iter().zip(alpha).map(|(a, b)| a * b).sum();
    let v = cg_solve(theta, data, &k, cfg)?;
    if !v.converged {
        return Err(Error::NotConverged {
            context: "predictive variance solve".into(),
            iterations: v.iterations,
            residual: v.final_residual_norm,
        });
    }
    let explained: f64 = k.iter().zip(&v.solution).map(|(a, b)| a * b).sum();
    // The latent variance σ − k*ᵀK⁻¹k* is non-negative; clip roundoff.
    Ok((mean, theta.lambda() + (theta.sigma() - explained).max(0.0)))
}

fn label_weights(theta: &HyperParams, data: &Dataset, cfg: &CgConfig) -> Result<Vec<f64>> {
    let r = cg_solve(theta, data, data.y(), cfg)?;
    if !r.converged {
        return Err(Error::NotConverged {
            context: "predictive mean solve".into(),
            iterations: r.iterations,
            residual: r.final_residual_norm,
        });
    }
    Ok(r.solution)
}

/// Predictive mean and variance at one point.
pub fn predict_at(theta: &HyperParams, data: &Dataset, x_star: &[f64]) -> Result<(f64, f64)> {
    check_len("test input", data.d(), x_star.len())?;
    let cfg = solver_config();
    let alpha = label_weights(theta, data, &cfg)?;
    point(theta, data, &alpha, x_star, &cfg)
}

/// Predictive means and variances at several points, sharing the `K⁻¹y` solve.
pub fn predict_points(theta: &HyperParams, data: &Dataset, x_star: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    for x in x_star {
        check_len("test input", data.d(), x.len())?;
    }
    let cfg = solver_config();
    let alpha = label_weights(theta, data, &cfg)?;
    x_star.iter().map(|x| point(theta, data, &alpha, x, &cfg)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `components[s][j]` is the (mean, variance) of sample `s` at point `j`.
    pub components: Option<Vec<Vec<(f64, f64)>>>,
    pub num_samples: usize,
}

/// Moments of an equally weighted Gaussian mixture.
pub fn mixture_moments(components: &[(f64, f64)]) -> (f64, f64) {
    let m = components.len() as f64;
    let mean = components.iter().map(|c| c.0).sum::<f64>() / m;
    let second = components.iter().map(|c| c.1 + c.0 * c.0).sum::<f64>() / m;
    (mean, (second - mean * mean).max(0.0))
}

/// Monte Carlo predictive: mixture over every `stride`-th post-burn-in sample.
pub fn predict_mc(
    chain: &SampleChain,
    data: &Dataset,
    x_star: &[Vec<f64>],
    stride: usize,
    keep_components: bool,
) -> Result<PredictiveResult> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let selected: Vec<[f64; 3]> = chain.posterior().iter().step_by(stride).copied().collect();
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no post-burn-in samples to average over".into()));
    }
    let per_sample: Vec<Vec<(f64, f64)>> = selected
        .par_iter()
        .map(|psi| predict_points(&HyperParams::from_log(*psi)?, data, x_star))
        .collect::<Result<_>>()?;
    let (mean, variance) = (0..x_star.len())
        .map(|j| mixture_moments(&per_sample.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .unzip();
    Ok(PredictiveResult {
        mean,
        variance,
        num_samples: selected.len(),
        components: keep_components.then_some(per_sample),
    })
}
