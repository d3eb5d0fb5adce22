//! Log-marginal likelihood, its exact gradient, and the unbiased stochastic
//! gradient built from Rademacher trace probes and ULISSE solves.
//!
//! Gradients returned to samplers live in log space `ψ = log θ`: component `i`
//! of a natural-space gradient is multiplied by `θ_i`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernel::{
    dense_covariance, dense_derivative, fused_products, Dataset, DerivativeSelector, HyperParams, ProductKinds,
};
use crate::rng::RngStream;
use crate::solvers::{cg_solve, CgConfig, CovarianceOperator, DENSE_LIMIT};
use crate::ulisse::{ulisse_solve_batch, UlisseConfig, UlisseRequest};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gamma(shape `a`, rate `b`) prior on one natural-space parameter.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let p = Self { shape, rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0) || !self.shape.is_finite() || !self.rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma prior needs positive finite shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    /// Log density of `ψ = log θ`, including the `e^ψ` Jacobian:
    /// `aψ − b e^ψ + a log b − log Γ(a)`.
    pub fn log_density_log_space(&self, psi: f64) -> f64 {
        self.shape * psi - self.rate * psi.exp() + self.shape * self.rate.ln() - libm::lgamma(self.shape)
    }

    /// `d/dψ` of the above: `a − bθ`.
    pub fn log_space_gradient(&self, theta: f64) -> f64 {
        self.shape - self.rate * theta
    }
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

/// Independent priors on `(σ, τ, λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    pub sigma: GammaPrior,
    pub tau: GammaPrior,
    pub lambda: GammaPrior,
}

impl Priors {
    pub fn shared(p: GammaPrior) -> Self {
        Self { sigma: p, tau: p, lambda: p }
    }

    pub fn components(&self) -> [GammaPrior; 3] {
        [self.sigma, self.tau, self.lambda]
    }

    pub fn log_density(&self, psi: [f64; 3]) -> f64 {
        self.components().iter().zip(psi).map(|(p, x)| p.log_density_log_space(x)).sum()
    }
}

/// `∇_ψ log p(ψ)`, component `i` equal to `a_i − b_i θ_i`.
pub fn log_prior_gradient(theta: &HyperParams, priors: &Priors) -> [f64; 3] {
    let t = theta.natural();
    let c = priors.components();
    [0, 1, 2].map(|i| c[i].log_space_gradient(t[i]))
}

fn guard(data: &Dataset, what: &'static str) -> Result<()> {
    if data.n() > DENSE_LIMIT {
        return Err(Error::Capacity { what, n: data.n(), limit: DENSE_LIMIT });
    }
    Ok(())
}

fn factor(theta: &HyperParams, data: &Dataset) -> Result<Cholesky<f64, Dyn>> {
    dense_covariance(theta, data).cholesky().ok_or(Error::NotPositiveDefinite)
}

/// `log p(y | θ) = −½ log|K| − ½ yᵀK⁻¹y − (n/2) log 2π`, via a dense Cholesky factor.
pub fn log_marginal_likelihood(theta: &HyperParams, data: &Dataset) -> Result<f64> {
    guard(data, "log marginal likelihood")?;
    let chol = factor(theta, data)?;
    let y = DVector::from_column_slice(data.y());
    let alpha = chol.solve(&y);
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(-half_logdet - 0.5 * y.dot(&alpha) - 0.5 * data.n() as f64 * LN_2PI)
}

/// Log posterior over `ψ`: marginal likelihood plus log-space Gamma priors.
pub fn log_posterior(psi: [f64; 3], data: &Dataset, priors: &Priors) -> Result<f64> {
    let theta = HyperParams::from_log(psi)?;
    Ok(log_marginal_likelihood(&theta, data)? + priors.log_density(psi))
}

/// Natural-space gradient `g_i = −½ tr(K⁻¹ ∂K/∂θ_i) + ½ yᵀK⁻¹ ∂K/∂θ_i K⁻¹y`.
pub fn exact_gradient(theta: &HyperParams, data: &Dataset) -> Result<[f64; 3]> {
    guard(data, "exact gradient")?;
    let chol = factor(theta, data)?;
    let alpha = chol.solve(&DVector::from_column_slice(data.y()));
    let k_inv = chol.inverse();
    let mut g = [0.0; 3];
    for sel in DerivativeSelector::ALL {
        let (trace, quad) = match sel {
            DerivativeSelector::Lambda => (k_inv.trace(), alpha.dot(&alpha)),
            _ => {
                let dk = dense_derivative(theta, data, sel);
                // Both matrices are symmetric, so tr(K⁻¹ D) is the elementwise sum.
                (k_inv.component_mul(&dk).sum(), alpha.dot(&(&dk * &alpha)))
            }
        };
        g[sel.index()] = -0.5 * trace + 0.5 * quad;
    }
    Ok(g)
}

/// [`exact_gradient`] in log space.
pub fn exact_log_gradient(theta: &HyperParams, data: &Dataset) -> Result<[f64; 3]> {
    let g = exact_gradient(theta, data)?;
    let t = theta.natural();
    Ok([g[0] * t[0], g[1] * t[1], g[2] * t[2]])
}

/// Exact log-space gradient of the log posterior.
pub fn log_posterior_gradient(psi: [f64; 3], data: &Dataset, priors: &Priors) -> Result<[f64; 3]> {
    let theta = HyperParams::from_log(psi)?;
    let g = exact_log_gradient(&theta, data)?;
    let p = log_prior_gradient(&theta, priors);
    Ok([g[0] + p[0], g[1] + p[1], g[2] + p[2]])
}

/// Dense `tr(K⁻¹ ∂K/∂θ_i)` for each parameter.
pub fn exact_trace_terms(theta: &HyperParams, data: &Dataset) -> Result<[f64; 3]> {
    guard(data, "exact trace")?;
    let k_inv = factor(theta, data)?.inverse();
    Ok(DerivativeSelector::ALL.map(|sel| match sel {
        DerivativeSelector::Lambda => k_inv.trace(),
        _ => k_inv.component_mul(&dense_derivative(theta, data, sel)).sum(),
    }))
}

/// One Hutchinson sample `rᵀ K⁻¹ (∂K/∂θ_i) r` per parameter, with `K⁻¹r` from CG.
pub fn trace_probe_sample(theta: &HyperParams, data: &Dataset, probe: &[f64], cfg: &CgConfig) -> Result<[f64; 3]> {
    let solve = cg_solve(theta, data, probe, cfg)?;
    if !solve.converged {
        return Err(Error::NotConverged {
            context: "trace probe solve".into(),
            iterations: solve.iterations,
            residual: solve.final_residual_norm,
        });
    }
    let d = fused_products(theta, data, &[probe], ProductKinds::DERIVATIVES, &cfg.cmvp)?;
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok([
        dotp(&solve.solution, &d.d_sigma[0]),
        dotp(&solve.solution, &d.d_tau[0]),
        dotp(&solve.solution, probe),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct StochasticitySources {
    pub trace_probe: bool,
    pub roulette: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    /// Log-space gradient estimate of the log-marginal likelihood.
    pub g_tilde: [f64; 3],
    pub num_probes: usize,
    /// CG iterations summed over every system solved.
    pub solver_iterations: usize,
    /// Root seed of the stream the probes were drawn from; `None` when supplied.
    pub probe_seed: Option<u64>,
    pub sources: StochasticitySources,
}

/// Probe vectors plus the last solutions of their systems, reused as initial
/// guesses while the probes stay fixed.
#[derive(Clone, Debug, Default)]
pub struct GradientEstimator {
    probes: Vec<Vec<f64>>,
    probe_seed: Option<u64>,
    probe_guesses: Vec<Option<Vec<f64>>>,
    label_guess: Option<Vec<f64>>,
    warm_start: bool,
}

impl GradientEstimator {
    /// Draws `num_probes` Rademacher probes of length `n`.
    pub fn new(n: usize, num_probes: usize, warm_start: bool, rng: &mut RngStream) -> Result<Self> {
        let mut est = Self { warm_start, ..Self::default() };
        est.redraw(n, num_probes, rng)?;
        Ok(est)
    }

    /// Uses caller-supplied probes.
    pub fn with_probes(probes: Vec<Vec<f64>>, warm_start: bool) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::InvalidArgument("at least one probe is required".into()));
        }
        let count = probes.len();
        Ok(Self {
            probes,
            probe_seed: None,
            probe_guesses: vec![None; count],
            label_guess: None,
            warm_start,
        })
    }

    /// Replaces the probes and discards warm starts tied to them.
    pub fn redraw(&mut self, n: usize, num_probes: usize, rng: &mut RngStream) -> Result<()> {
        if num_probes == 0 {
            return Err(Error::InvalidArgument("num_probes must be at least 1".into()));
        }
        self.probes = (0..num_probes).map(|_| rng.rademacher(n)).collect();
        self.probe_seed = Some(rng.seed());
        self.probe_guesses = vec![None; num_probes];
        self.label_guess = None;
        Ok(())
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    /// Unbiased log-space gradient at `θ`; `rng` drives the roulette draws only.
    pub fn estimate(
        &mut self,
        theta: &HyperParams,
        data: &Dataset,
        cfg: &UlisseConfig,
        rng: &RngStream,
    ) -> Result<GradientEstimate> {
        let n = data.n();
        let count = self.probes.len();
        for p in &self.probes {
            crate::error::check_len("probe", n, p.len())?;
        }
        let op = CovarianceOperator::new(*theta, data, cfg.base.cmvp);
        let mut requests: Vec<UlisseRequest> = self
            .probes
            .iter()
            .zip(&self.probe_guesses)
            .map(|(p, g)| UlisseRequest { b: p, initial_guess: g.as_deref(), num_replicas: 1 })
            .collect();
        requests.push(UlisseRequest { b: data.y(), initial_guess: self.label_guess.as_deref(), num_replicas: 2 });
        let streams: Vec<RngStream> = (0..=count).map(|i| rng.substream(i as u64)).collect();
        let solutions = ulisse_solve_batch(&op, &requests, cfg, &streams)?;
        for (i, s) in solutions.iter().enumerate() {
            if !s.report.converged {
                let what = if i < count { format!("probe {i}") } else { "label system".to_string() };
                return Err(Error::NotConverged {
                    context: format!("stochastic gradient, {what}"),
                    iterations: s.report.iterations,
                    residual: s.report.final_residual_norm,
                });
            }
        }
        let label = &solutions[count];
        let (u1, u2) = (&label.estimates[0], &label.estimates[1]);

        let mut inputs: Vec<&[f64]> = self.probes.iter().map(|p| p.as_slice()).collect();
        inputs.push(u2);
        let deriv = fused_products(theta, data, &inputs, ProductKinds::DERIVATIVES, &cfg.base.cmvp)?;

        let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut trace = [0.0; 3];
        for (k, sol) in solutions[..count].iter().enumerate() {
            let z = &sol.estimates[0];
            trace[0] += dotp(z, &deriv.d_sigma[k]);
            trace[1] += dotp(z, &deriv.d_tau[k]);
            trace[2] += dotp(z, &self.probes[k]);
        }
        let quad = [dotp(u1, &deriv.d_sigma[count]), dotp(u1, &deriv.d_tau[count]), dotp(u1, u2)];
        let t = theta.natural();
        let g_tilde = [0, 1, 2].map(|i| (-trace[i] / (2.0 * count as f64) + 0.5 * quad[i]) * t[i]);
        if !g_tilde.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite stochastic gradient {g_tilde:?}")));
        }

        let solver_iterations = solutions.iter().map(|s| s.report.iterations).sum();
        if self.warm_start {
            for (g, s) in self.probe_guesses.iter_mut().zip(&solutions) {
                *g = Some(s.report.solution.clone());
            }
            self.label_guess = Some(solutions[count].report.solution.clone());
        }
        Ok(GradientEstimate {
            g_tilde,
            num_probes: count,
            solver_iterations,
            probe_seed: self.probe_seed,
            sources: StochasticitySources { trace_probe: true, roulette: !cfg.is_degenerate(n) },
        })
    }
}

/// Unbiased log-space gradient of the log-marginal likelihood with `num_probes`
/// Rademacher probes (drawn from `rng` unless supplied).
pub fn stochastic_gradient(
    theta: &HyperParams,
    data: &Dataset,
    num_probes: usize,
    ulisse_cfg: &UlisseConfig,
    probes: Option<&[Vec<f64>]>,
    rng: &RngStream,
) -> Result<GradientEstimate> {
    let mut est = match probes {
        Some(p) => {
            if p.len() != num_probes {
                return Err(Error::InvalidArgument(format!(
                    "expected {num_probes} probes, got {}",
                    p.len()
                )));
            }
            GradientEstimator::with_probes(p.to_vec(), false)?
        }
        None => GradientEstimator::new(data.n(), num_probes, false, &mut rng.substream(u64::MAX))?,
    };
    est.estimate(theta, data, ulisse_cfg, &rng.substream(u64::MAX - 1))
}

/// `‖g − g̃‖² / ‖g‖²`.
pub fn gradient_relative_error(exact: &[f64; 3], estimate: &[f64; 3]) -> Result<f64> {
    let den: f64 = exact.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("exact gradient is zero".into()));
    }
    let num: f64 = exact.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// Dense `K⁻¹`, exposed for oracles on small problems.
pub fn dense_inverse(theta: &HyperParams, data: &Dataset) -> Result<DMatrix<f64>> {
    guard(data, "dense inverse")?;
    Ok(factor(theta, data)?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_dataset, random_vec};

    fn theta(s: f64, t: f64, l: f64) -> HyperParams {
        HyperParams::new(s, t, l).unwrap()
    }

    #[test]
    fn identity_covariance_likelihood() {
        let data = random_dataset(30, 2, 1);
        let yy: f64 = data.y().iter().map(|v| v * v).sum();
        let got = log_marginal_likelihood(&theta(0.0, 1.0, 1.0), &data).unwrap();
        let want = -0.5 * yy - 15.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn two_point_identity_likelihood() {
        let data = Dataset::new(vec![0.0, 1.0], vec![1.0, 0.0], 1).unwrap();
        let got = log_marginal_likelihood(&theta(0.0, 1.0, 1.0), &data).unwrap();
        let want = -0.5 - (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn likelihood_matches_determinant_and_inverse() {
        let data = random_dataset(50, 3, 2);
        let t = theta(1.0, 1.0, 0.1);
        let k = dense_covariance(&t, &data);
        let lu = k.clone().lu();
        let y = DVector::from_column_slice(data.y());
        let want = -0.5 * lu.determinant().ln()
            - 0.5 * y.dot(&(lu.try_inverse().unwrap() * &y))
            - 25.0 * (2.0 * std::f64::consts::PI).ln();
        let got = log_marginal_likelihood(&t, &data).unwrap();
        assert!((got - want).abs() < 1e-10 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn identity_gradient_closed_form() {
        let data = random_dataset(40, 2, 3);
        let l = 0.7;
        let g = exact_gradient(&theta(0.0, 1.0, l), &data).unwrap();
        let yy: f64 = data.y().iter().map(|v| v * v).sum();
        let want = -40.0 / (2.0 * l) + yy / (2.0 * l * l);
        assert!((g[2] - want).abs() < 1e-10 * want.abs());
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_dataset(100, 3, 4);
        let t = theta(1.0, 1.0, 0.1);
        let g = exact_gradient(&t, &data).unwrap();
        let h = 1e-5;
        for sel in DerivativeSelector::ALL {
            let x = t.get(sel);
            let fp = log_marginal_likelihood(&t.with(sel, x + h).unwrap(), &data).unwrap();
            let fm = log_marginal_likelihood(&t.with(sel, x - h).unwrap(), &data).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((g[sel.index()] - fd).abs() < 1e-5 * fd.abs(), "{sel:?}: {} vs {fd}", g[sel.index()]);
        }
    }

    #[test]
    fn capacity_guard() {
        let data = random_dataset(DENSE_LIMIT + 1, 1, 5);
        assert!(matches!(
            log_marginal_likelihood(&theta(1.0, 1.0, 1.0), &data).unwrap_err(),
            Error::Capacity { .. }
        ));
    }

    #[test]
    fn non_positive_definite_is_reported() {
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0, 1.0], 1).unwrap();
        // Two identical inputs and no noise make K singular.
        let err = log_marginal_likelihood(&theta(1.0, 1.0, 0.0), &data).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite));
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn prior_gradient_cases() {
        let p = Priors::shared(GammaPrior::new(1.0, 2.0).unwrap());
        let g = log_prior_gradient(&theta(0.5, 0.5, 0.5), &p);
        assert_eq!(g, [0.0, 0.0, 0.0]);
        let p = Priors::default();
        assert_eq!(log_prior_gradient(&theta(2.0, 2.0, 2.0), &p), [-1.0, -1.0, -1.0]);
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let prior = GammaPrior::new(2.5, 0.7).unwrap();
        for psi in [-2.0, -0.3, 0.0, 1.1] {
            let h = 1e-5;
            let fd = (prior.log_density_log_space(psi + h) - prior.log_density_log_space(psi - h)) / (2.0 * h);
            let g = prior.log_space_gradient(f64::exp(psi));
            assert!((g - fd).abs() < 1e-8 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn log_prior_integrates_to_one() {
        // Trapezoid over ψ of exp(log density) should be 1.
        let prior = GammaPrior::new(2.0, 3.0).unwrap();
        let (lo, hi, m) = (-20.0, 5.0, 200_000);
        let h = (hi - lo) / m as f64;
        let total: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * prior.log_density_log_space(lo + i as f64 * h).exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_cases() {
        let g = [1.0, -2.0, 0.5];
        assert_eq!(gradient_relative_error(&g, &g).unwrap(), 0.0);
        assert!((gradient_relative_error(&g, &[2.0, -4.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(gradient_relative_error(&g, &[0.0; 3]).unwrap(), 1.0);
        assert!(gradient_relative_error(&[0.0; 3], &g).is_err());
    }

    #[test]
    fn identity_covariance_stochastic_gradient_is_deterministic_in_lambda() {
        let data = random_dataset(50, 2, 6);
        let l = 0.8;
        let t = theta(0.0, 1.0, l);
        let cfg = UlisseConfig { q: 1e-12, ..Default::default() };
        let yy: f64 = data.y().iter().map(|v| v * v).sum();
        let want = (-50.0 / (2.0 * l) + yy / (2.0 * l * l)) * l;
        for seed in 0..5 {
            let g = stochastic_gradient(&t, &data, 3, &cfg, None, &RngStream::new(seed)).unwrap();
            assert!((g.g_tilde[2] - want).abs() < 1e-9 * want.abs());
            assert!(!g.sources.roulette);
        }
    }

    #[test]
    fn fixed_probes_with_exact_solves_match_dense_formula() {
        let data = random_dataset(60, 3, 7);
        let t = theta(1.2, 0.6, 0.15);
        let probes: Vec<Vec<f64>> = (0..2).map(|s| RngStream::new(100 + s).rademacher(60)).collect();
        let cfg = UlisseConfig { q: 1e-12, ..Default::default() };
        let g = stochastic_gradient(&t, &data, 2, &cfg, Some(&probes), &RngStream::new(1)).unwrap();

        let k_inv = dense_inverse(&t, &data).unwrap();
        let alpha = &k_inv * DVector::from_column_slice(data.y());
        for sel in DerivativeSelector::ALL {
            let dk = dense_derivative(&t, &data, sel);
            let a = &k_inv * &dk;
            let tr: f64 = probes
                .iter()
                .map(|r| {
                    let r = DVector::from_column_slice(r);
                    r.dot(&(&a * &r))
                })
                .sum::<f64>()
                / 2.0;
            let want = (-0.5 * tr + 0.5 * alpha.dot(&(&dk * &alpha))) * t.get(sel);
            let got = g.g_tilde[sel.index()];
            assert!((got - want).abs() < 1e-6 * want.abs(), "{sel:?}: {got} vs {want}");
        }
    }

    #[test]
    fn probe_count_mismatch_is_rejected() {
        let data = random_dataset(10, 1, 8);
        let probes = vec![random_vec(10, 1)];
        let err = stochastic_gradient(&theta(1.0, 1.0, 1.0), &data, 2, &UlisseConfig::default(), Some(&probes), &RngStream::new(0));
        assert!(err.is_err());
    }
}
