use crate::error::{Error, Result};
use crate::gradients::{exact_log_gradient, log_marginal_likelihood, log_posterior_gradient, Priors};
use crate::kernel::{Dataset, HyperParams};
use crate::linalg3::{repaired_inverse, symmetrize, Mat3};
use crate::solvers::DENSE_LIMIT;

/// Central-difference step in log space for the Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapOptions {
    pub max_steps: usize,
    /// Stop once the log-space gradient norm drops below this.
    pub tol: f64,
    /// Coordinates held at their initial natural value when false.
    pub active: [bool; 3],
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { max_steps: 500, tol: 1e-6, active: [true; 3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapResult {
    pub theta: HyperParams,
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub steps: usize,
    /// False when `max_steps` ran out or no ascent step could be found; `theta`
    /// is then the best iterate seen.
    pub converged: bool,
}

impl MapResult {
    pub fn psi(&self) -> [f64; 3] {
        self.theta.psi()
    }
}

pub fn map_estimate(data: &Dataset, priors: &Priors, init: HyperParams, max_steps: usize) -> Result<MapResult> {
    map_estimate_with(data, priors, init, &MapOptions { max_steps, ..MapOptions::default() })
}

struct Objective<'a> {
    data: &'a Dataset,
    priors: [crate::gradients::GammaPrior; 3],
    init: [f64; 3],
    active: [bool; 3],
}

impl Objective<'_> {
    fn theta(&self, psi: &[f64; 3]) -> Result<HyperParams> {
        let v: [f64; 3] = [0, 1, 2].map(|i| if self.active[i] { psi[i].exp() } else { self.init[i] });
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Degenerate(format!("parameters overflowed at log values {psi:?}")));
        }
        HyperParams::new(v[0], v[1], v[2])
    }

    fn value(&self, psi: &[f64; 3]) -> Result<f64> {
        let theta = self.theta(psi)?;
        let mut f = log_marginal_likelihood(&theta, self.data)?;
        for i in (0..3).filter(|&i| self.active[i]) {
            f += self.priors[i].log_density_log_space(psi[i]);
        }
        Ok(f)
    }

    fn gradient(&self, psi: &[f64; 3]) -> Result<[f64; 3]> {
        let theta = self.theta(psi)?;
        let g = exact_log_gradient(&theta, self.data)?;
        let t = theta.natural();
        Ok([0, 1, 2].map(|i| if self.active[i] { g[i] + self.priors[i].log_space_gradient(t[i]) } else { 0.0 }))
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient ascent on the log posterior in log space with Barzilai–Borwein
/// trial steps and Armijo backtracking.
pub fn map_estimate_with(data: &Dataset, priors: &Priors, init: HyperParams, opts: &MapOptions) -> Result<MapResult> {
    if data.n() > DENSE_LIMIT {
        return Err(Error::Capacity { what: "MAP estimate", n: data.n(), limit: DENSE_LIMIT });
    }
    for i in 0..3 {
        if opts.active[i] && !(init.natural()[i] > 0.0) {
            return Err(Error::InvalidArgument(format!("active parameter {i} must start strictly positive")));
        }
    }
    let obj = Objective { data, priors: priors.components(), init: init.natural(), active: opts.active };
    let mut x = init.natural().map(f64::ln);
    let mut f = obj.value(&x)?;
    let mut g = obj.gradient(&x)?;
    let mut alpha = 0.1 / norm(&g).max(1.0);
    let mut steps = 0;
    let done = |x: &[f64; 3], f: f64, g: &[f64; 3], steps: usize, converged: bool| -> Result<MapResult> {
        Ok(MapResult { theta: obj.theta(x)?, log_posterior: f, grad_norm: norm(g), steps, converged })
    };
    while steps < opts.max_steps {
        let gg = g.iter().map(|v| v * v).sum::<f64>();
        if gg.sqrt() < opts.tol {
            return done(&x, f, &g, steps, true);
        }
        // Roundoff in the objective near the optimum can mask a genuine ascent step.
        let slack = 8.0 * f64::EPSILON * f.abs();
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [0, 1, 2].map(|i| x[i] + alpha * g[i]);
            if let Ok(ft) = obj.value(&trial) {
                if ft >= f + 1e-4 * alpha * gg - slack {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return done(&x, f, &g, steps, false);
        };
        let g_new = obj.gradient(&x_new)?;
        let s = [0, 1, 2].map(|i| x_new[i] - x[i]);
        let y = [0, 1, 2].map(|i| g_new[i] - g[i]);
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        alpha = if sy < 0.0 { ss / -sy } else { 2.0 * alpha };
        x = x_new;
        f = f_new;
        g = g_new;
        steps += 1;
    }
    let converged = norm(&g) < opts.tol;
    done(&x, f, &g, steps, converged)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreconditionerEstimate {
    /// Inverse of the negated Hessian, after any eigenvalue repair.
    pub m: Mat3,
    pub hessian: Mat3,
    /// The negated Hessian was not positive definite enough and was clipped.
    pub repaired: bool,
}

/// `(−H)⁻¹` with `H` the central-difference Jacobian of `grad` at `psi`.
pub fn hessian_preconditioner(
    grad: impl Fn([f64; 3]) -> Result<[f64; 3]>,
    psi: [f64; 3],
    h: f64,
) -> Result<PreconditionerEstimate> {
    let mut hess = Mat3::zeros();
    for j in 0..3 {
        let mut up = psi;
        let mut down = psi;
        up[j] += h;
        down[j] -= h;
        let (gu, gd) = (grad(up)?, grad(down)?);
        for i in 0..3 {
            hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    let hess = symmetrize(&hess);
    let (m, repaired) = repaired_inverse(&(-hess), 1e-8);
    Ok(PreconditionerEstimate { m: symmetrize(&m), hessian: hess, repaired })
}

/// Preconditioner from the log-posterior Hessian at the MAP.
pub fn estimate_preconditioner(data: &Dataset, priors: &Priors, map: &HyperParams) -> Result<PreconditionerEstimate> {
    if data.n() > DENSE_LIMIT {
        return Err(Error::Capacity { what: "preconditioner Hessian", n: data.n(), limit: DENSE_LIMIT });
    }
    hessian_preconditioner(|p| log_posterior_gradient(p, data, priors), map.psi(), HESSIAN_STEP)
}
