use crate::error::{check_len, Error, Result};
use crate::kernel::{dot, CmvpOptions, Dataset, HyperParams};

use super::operator::{CovarianceOperator, LinearOperator};

#[derive(Clone, Debug, PartialEq)]
pub struct CgConfig {
    /// Absolute threshold on the Euclidean residual norm.
    pub epsilon: f64,
    /// Iteration cap; `None` means `10·n`.
    pub max_iters: Option<usize>,
    pub initial_guess: Option<Vec<f64>>,
    pub cmvp: CmvpOptions,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iters: None,
            initial_guess: None,
            cmvp: CmvpOptions::default(),
        }
    }
}

impl CgConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn max_iters_for(&self, n: usize) -> usize {
        self.max_iters.unwrap_or(10 * n.max(1))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == Some(0) {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    /// Continuation steps after the early-stop threshold (ULISSE only).
    pub roulette_steps: usize,
    /// Accumulated inner CG steps (PCG only).
    pub inner_iterations: usize,
}

/// The recurrences of one CG run, advanced one product at a time so that several
/// systems can share each pass over the kernel.
#[derive(Clone, Debug)]
pub struct CgState {
    solution: Vec<f64>,
    residual: Vec<f64>,
    direction: Vec<f64>,
    residual_sq: f64,
    iterations: usize,
    deterministic: bool,
}

impl CgState {
    /// Starts from `s0` given `K s0`, so that `e0 = b − K s0`, `d0 = e0`.
    pub fn new(b: &[f64], s0: Vec<f64>, k_s0: &[f64], deterministic: bool) -> Self {
        let residual: Vec<f64> = b.iter().zip(k_s0).map(|(b, k)| b - k).collect();
        let residual_sq = dot(&residual, &residual, deterministic);
        Self {
            solution: s0,
            direction: residual.clone(),
            residual,
            residual_sq,
            iterations: 0,
            deterministic,
        }
    }

    /// Starts from `s0 = 0`.
    pub fn from_zero(b: &[f64], deterministic: bool) -> Self {
        let zeros = vec![0.0; b.len()];
        Self::new(b, zeros.clone(), &zeros, deterministic)
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn solution(&self) -> &[f64] {
        &self.solution
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_sq.sqrt()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn into_solution(self) -> Vec<f64> {
        self.solution
    }

    /// One CG iteration given `K d_i`. When `increment` is supplied it receives
    /// `δ_i = α_i d_i`, the change applied to the solution.
    pub fn advance(&mut self, k_dir: &[f64], increment: Option<&mut [f64]>) -> Result<()> {
        let curvature = dot(&self.direction, k_dir, self.deterministic);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown { iteration: self.iterations, curvature });
        }
        let alpha = self.residual_sq / curvature;
        for (s, d) in self.solution.iter_mut().zip(&self.direction) {
            *s += alpha * d;
        }
        if let Some(inc) = increment {
            for (o, d) in inc.iter_mut().zip(&self.direction) {
                *o = alpha * d;
            }
        }
        for (e, kd) in self.residual.iter_mut().zip(k_dir) {
            *e -= alpha * kd;
        }
        let next_sq = dot(&self.residual, &self.residual, self.deterministic);
        let beta = next_sq / self.residual_sq;
        for (d, e) in self.direction.iter_mut().zip(&self.residual) {
            *d = e + beta * *d;
        }
        self.residual_sq = next_sq;
        self.iterations += 1;
        Ok(())
    }
}

pub(crate) fn initial_state<A: LinearOperator>(op: &A, b: &[f64], guess: Option<&[f64]>) -> Result<CgState> {
    let n = op.dim();
    check_len("b", n, b.len())?;
    match guess {
        Some(s0) => {
            check_len("initial guess", n, s0.len())?;
            let k_s0 = op.apply(s0)?;
            Ok(CgState::new(b, s0.to_vec(), &k_s0, op.deterministic()))
        }
        None => Ok(CgState::from_zero(b, op.deterministic())),
    }
}

/// Conjugate gradients on any symmetric positive definite operator.
pub fn cg_solve_op<A: LinearOperator>(op: &A, b: &[f64], cfg: &CgConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let max_iters = cfg.max_iters_for(op.dim());
    let mut state = initial_state(op, b, cfg.initial_guess.as_deref())?;
    let mut converged = state.residual_norm() < cfg.epsilon;
    while !converged && state.iterations() < max_iters {
        let kd = op.apply(state.direction())?;
        state.advance(&kd, None)?;
        converged = state.residual_norm() < cfg.epsilon;
    }
    Ok(SolveReport {
        iterations: state.iterations(),
        final_residual_norm: state.residual_norm(),
        converged,
        roulette_steps: 0,
        inner_iterations: 0,
        solution: state.into_solution(),
    })
}

/// Solves `K(θ) s = b` matrix-free.
pub fn cg_solve(theta: &HyperParams, data: &Dataset, b: &[f64], cfg: &CgConfig) -> Result<SolveReport> {
    let op = CovarianceOperator::new(*theta, data, cfg.cmvp);
    cg_solve_op(&op, b, cfg)
}
