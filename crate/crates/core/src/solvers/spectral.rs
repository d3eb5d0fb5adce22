use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::gradients::GammaPrior;
use crate::kernel::{dense_covariance, dot, CmvpOptions, Dataset, HyperParams};
use crate::rng::RngStream;

use super::operator::{CovarianceOperator, LinearOperator};

/// Largest `n` for which a dense `n × n` covariance is ever assembled.
pub const DENSE_LIMIT: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Dense symmetric eigendecomposition.
    Exact,
    /// Extremal Ritz values of an `m`-step Lanczos run on matrix-free products.
    Estimate { steps: usize },
}

impl ConditionMode {
    pub const ESTIMATE: Self = ConditionMode::Estimate { steps: 100 };
}

/// `κ = λ_max(K) / λ_min(K)`.
pub fn condition_number(theta: &HyperParams, data: &Dataset, mode: ConditionMode) -> Result<f64> {
    match mode {
        ConditionMode::Exact => {
            if data.n() > DENSE_LIMIT {
                return Err(Error::Capacity {
                    what: "exact condition number",
                    n: data.n(),
                    limit: DENSE_LIMIT,
                });
            }
            let eig = SymmetricEigen::new(dense_covariance(theta, data));
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            if !(min > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            Ok((max / min).max(1.0))
        }
        ConditionMode::Estimate { steps } => {
            let op = CovarianceOperator::new(*theta, data, CmvpOptions::default());
            let (lo, hi) = lanczos_extremes(&op, steps, 0x1A2C_2055)?;
            if !(lo > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            Ok((hi / lo).max(1.0))
        }
    }
}

/// Smallest and largest Ritz values after at most `steps` Lanczos iterations,
/// without reorthogonalization.
pub fn lanczos_extremes<A: LinearOperator>(op: &A, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let n = op.dim();
    let steps = steps.clamp(1, n);
    let mut q: Vec<f64> = RngStream::new(seed).rademacher(n);
    let norm = (n as f64).sqrt();
    q.iter_mut().for_each(|v| *v /= norm);
    let mut q_prev = vec![0.0; n];
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut beta_prev = 0.0;
    for _ in 0..steps {
        let mut w = op.apply(&q)?;
        let alpha = dot(&w, &q, true);
        for i in 0..n {
            w[i] -= alpha * q[i] + beta_prev * q_prev[i];
        }
        alphas.push(alpha);
        let beta = dot(&w, &w, true).sqrt();
        if beta <= 1e-12 * alpha.abs().max(1.0) {
            break;
        }
        betas.push(beta);
        q_prev = std::mem::replace(&mut q, w.iter().map(|v| v / beta).collect());
        beta_prev = beta;
    }
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j || j + 1 == i {
            betas[i.min(j)]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    Ok((eig.eigenvalues.min(), eig.eigenvalues.max()))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub draw_index: usize,
    pub sigma: f64,
    pub tau: f64,
    pub lambda: f64,
    pub kappa: f64,
}

/// Condition numbers of `K(θ)` for `θ` drawn componentwise from one Gamma prior.
pub fn condition_sweep(data: &Dataset, prior: &GammaPrior, num_draws: usize, seed: u64) -> Result<Vec<SweepRow>> {
    if num_draws == 0 {
        return Err(Error::InvalidArgument("num_draws must be at least 1".into()));
    }
    let gamma = Gamma::new(prior.shape, 1.0 / prior.rate)
        .map_err(|e| Error::InvalidArgument(format!("gamma prior: {e}")))?;
    let mode = if data.n() <= DENSE_LIMIT {
        ConditionMode::Exact
    } else {
        ConditionMode::ESTIMATE
    };
    let root = RngStream::new(seed);
    (0..num_draws)
        .map(|i| {
            let mut rng = root.substream(i as u64);
            let (s, t, l) = (gamma.sample(&mut rng), gamma.sample(&mut rng), gamma.sample(&mut rng));
            let theta = HyperParams::new(s, t, l)?;
            let kappa = condition_number(&theta, data, mode)?;
            Ok(SweepRow { draw_index: i, sigma: s, tau: t, lambda: l, kappa })
        })
        .collect()
}
