use crate::error::{Error, Result};
use crate::kernel::{dot, Dataset, HyperParams};

use super::cg::{cg_solve_op, initial_state, CgConfig, SolveReport};
use super::operator::{CovarianceOperator, LinearOperator, ShiftedOperator};

/// Preconditioned CG with `J = K + δI`.
///
/// Every outer iteration applies `J⁻¹` to the current residual with an inner CG
/// run. `inner_cfg.epsilon` is taken relative to the norm of the inner right-hand
/// side, since the outer residual shrinks towards the outer threshold. The outer
/// loop monitors the residual of the original system `b − K s`.
pub fn pcg_solve_op<A: LinearOperator>(
    op: &A,
    b: &[f64],
    delta: f64,
    outer_cfg: &CgConfig,
    inner_cfg: &CgConfig,
) -> Result<SolveReport> {
    outer_cfg.validate()?;
    inner_cfg.validate()?;
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be finite and >= 0, got {delta}")));
    }
    let n = op.dim();
    let det = op.deterministic();
    let max_iters = outer_cfg.max_iters_for(n);
    let shifted = ShiftedOperator { inner: op, shift: delta };
    let mut inner_iterations = 0usize;

    let mut precondition = |rhs: &[f64], outer_iter: usize| -> Result<Vec<f64>> {
        let norm = dot(rhs, rhs, det).sqrt();
        let cfg = CgConfig {
            epsilon: inner_cfg.epsilon * norm,
            initial_guess: None,
            ..inner_cfg.clone()
        };
        let rep = cg_solve_op(&shifted, rhs, &cfg)
            .map_err(|e| e.context(format!("PCG inner solve at outer iteration {outer_iter}")))?;
        inner_iterations += rep.iterations;
        if !rep.converged {
            return Err(Error::NotConverged {
                context: format!("PCG inner solve at outer iteration {outer_iter}"),
                iterations: rep.iterations,
                residual: rep.final_residual_norm,
            });
        }
        Ok(rep.solution)
    };

    let start = initial_state(op, b, outer_cfg.initial_guess.as_deref())?;
    let mut s = start.solution().to_vec();
    let mut e = start.residual().to_vec();
    let mut res_norm = start.residual_norm();
    let mut iterations = 0;
    if res_norm < outer_cfg.epsilon {
        return Ok(report(s, 0, res_norm, true, 0));
    }
    let mut z = precondition(&e, 0)?;
    let mut d = z.clone();
    let mut ez = dot(&e, &z, det);
    while iterations < max_iters {
        let kd = op.apply(&d)?;
        let curvature = dot(&d, &kd, det);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown { iteration: iterations, curvature });
        }
        let alpha = ez / curvature;
        let e_prev = e.clone();
        for i in 0..n {
            s[i] += alpha * d[i];
            e[i] -= alpha * kd[i];
        }
        iterations += 1;
        res_norm = dot(&e, &e, det).sqrt();
        if res_norm < outer_cfg.epsilon {
            return Ok(report(s, iterations, res_norm, true, inner_iterations));
        }
        z = precondition(&e, iterations)?;
        // Flexible (Polak–Ribière) coefficient: robust to inexact inner solves.
        let diff: Vec<f64> = e.iter().zip(&e_prev).map(|(a, b)| a - b).collect();
        let beta = dot(&z, &diff, det) / ez;
        ez = dot(&e, &z, det);
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    Ok(report(s, iterations, res_norm, false, inner_iterations))
}

fn report(solution: Vec<f64>, iterations: usize, res: f64, converged: bool, inner: usize) -> SolveReport {
    SolveReport {
        solution,
        iterations,
        final_residual_norm: res,
        converged,
        roulette_steps: 0,
        inner_iterations: inner,
    }
}

pub fn pcg_solve(
    theta: &HyperParams,
    data: &Dataset,
    b: &[f64],
    delta: f64,
    outer_cfg: &CgConfig,
    inner_cfg: &CgConfig,
) -> Result<SolveReport> {
    let op = CovarianceOperator::new(*theta, data, outer_cfg.cmvp);
    pcg_solve_op(&op, b, delta, outer_cfg, inner_cfg)
}
