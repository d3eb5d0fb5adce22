use nalgebra::Vector3;

use crate::diagnostics::langevin_ratio;
use crate::error::{Error, Result};
use crate::gradients::{exact_log_gradient, log_prior_gradient, GradientEstimator, Priors};
use crate::kernel::{Dataset, HyperParams};
use crate::linalg3::{cholesky_factor, is_spd, sample_covariance, Mat3};
use crate::rng::RngStream;
use crate::ulisse::UlisseConfig;

use super::chain::{SampleChain, VarianceBatch};

/// `ε_t = a (b + t)^{−γ}` for `t = 1, 2, ...`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl StepSchedule {
    /// Solves `a, b` so that `ε_1 = eps_start` and `ε_T = eps_end`.
    pub fn from_endpoints(eps_start: f64, eps_end: f64, total_iters: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0.5, 1], got {gamma}")));
        }
        if !(eps_start > 0.0 && eps_end > 0.0 && eps_end < eps_start) || !eps_start.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < eps_end < eps_start, got eps_start = {eps_start}, eps_end = {eps_end}"
            )));
        }
        if total_iters < 2 {
            return Err(Error::InvalidArgument("a decreasing schedule needs at least 2 iterations".into()));
        }
        let r = (eps_end / eps_start).powf(1.0 / gamma);
        let b = (r * total_iters as f64 - 1.0) / (1.0 - r);
        let a = eps_start * (b + 1.0).powf(gamma);
        Ok(Self { a, b, gamma })
    }

    pub fn at(&self, t: usize) -> f64 {
        self.a * (self.b + t as f64).powf(-self.gamma)
    }
}

/// SPD preconditioner `M` with its lower Cholesky factor for noise draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioner {
    m: Mat3,
    factor: Mat3,
}

impl Preconditioner {
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) || !is_spd(&m) {
            return Err(Error::InvalidArgument("preconditioner must be symmetric positive definite".into()));
        }
        Ok(Self { m, factor: cholesky_factor(&m)? })
    }

    pub fn identity() -> Self {
        Self { m: Mat3::identity(), factor: Mat3::identity() }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn factor(&self) -> &Mat3 {
        &self.factor
    }
}

/// One Langevin update `ψ + (ε/2) M (g + ∇log p) + η`, `η ~ N(0, ε M)`. Passing
/// `None` for `noise` gives the deterministic drift step.
pub fn sgld_step(
    psi: [f64; 3],
    grad_estimate: [f64; 3],
    prior_grad: [f64; 3],
    eps: f64,
    m: &Preconditioner,
    noise: Option<&mut RngStream>,
) -> Result<[f64; 3]> {
    let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive and finite, got {eps}")));
    }
    if !finite(&psi) || !finite(&grad_estimate) || !finite(&prior_grad) {
        return Err(Error::Diverged { iteration: 0, state: psi });
    }
    let drift = m.m * (Vector3::from(grad_estimate) + Vector3::from(prior_grad)) * (0.5 * eps);
    let mut next = Vector3::from(psi) + drift;
    if let Some(rng) = noise {
        let z = Vector3::new(rng.standard_normal(), rng.standard_normal(), rng.standard_normal());
        next += m.factor * z * eps.sqrt();
    }
    let out = [next[0], next[1], next[2]];
    if !finite(&out) {
        return Err(Error::Diverged { iteration: 0, state: out });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Rademacher probes with ULISSE solves.
    #[default]
    Stochastic,
    /// Dense exact gradient; only for small problems and checks.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgldConfig {
    pub eps_start: f64,
    pub eps_end: f64,
    pub gamma: f64,
    pub total_iters: usize,
    /// `None` disables freezing; the schedule then runs to the end.
    pub freeze_threshold: Option<f64>,
    pub variance_batch: usize,
    pub probe_redraw_period: usize,
    pub num_probes: usize,
    pub preconditioner: Mat3,
    pub solver: UlisseConfig,
    /// Reuse the previous solutions as initial guesses while probes are fixed.
    pub warm_start: bool,
    pub gradient: GradientMode,
    pub inject_noise: bool,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            eps_start: 1e-1,
            eps_end: 1e-4,
            gamma: 1.0,
            total_iters: 40_000,
            freeze_threshold: Some(0.002),
            variance_batch: 100,
            probe_redraw_period: 20,
            num_probes: 4,
            preconditioner: Mat3::identity(),
            // See `SolverSection::default` for why q is small.
            solver: UlisseConfig { q: 0.01, ..UlisseConfig::default() },
            warm_start: true,
            gradient: GradientMode::Stochastic,
            inject_noise: true,
        }
    }
}

impl SgldConfig {
    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::from_endpoints(self.eps_start, self.eps_end, self.total_iters, self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        Preconditioner::new(self.preconditioner)?;
        if let Some(th) = self.freeze_threshold {
            if !(th > 0.0) {
                return Err(Error::InvalidArgument(format!("freeze_threshold must be positive, got {th}")));
            }
        }
        for (name, v) in [
            ("variance_batch", self.variance_batch),
            ("probe_redraw_period", self.probe_redraw_period),
            ("num_probes", self.num_probes),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// A chain that stopped early, with everything produced before the failure.
#[derive(Debug)]
pub struct ChainFailure {
    pub partial: SampleChain,
    pub error: Error,
}

impl std::fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "chain stopped after {} samples: {}", self.partial.len(), self.error)
    }
}

impl std::error::Error for ChainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Starting point `ψ_MAP + L z`, `L Lᵀ = M`.
pub fn dispersed_init(center: [f64; 3], m: &Preconditioner, rng: &mut RngStream) -> [f64; 3] {
    let z = Vector3::new(rng.standard_normal(), rng.standard_normal(), rng.standard_normal());
    let p = Vector3::from(center) + m.factor * z;
    [p[0], p[1], p[2]]
}

pub fn run_sgld(
    data: &Dataset,
    priors: &Priors,
    cfg: &SgldConfig,
    init: [f64; 3],
    rng: &RngStream,
) -> std::result::Result<SampleChain, Box<ChainFailure>> {
    let mut chain = SampleChain::empty(init, rng.seed());
    match run_sgld_into(data, priors, cfg, init, rng, &mut chain) {
        Ok(()) => Ok(chain),
        Err(error) => Err(Box::new(ChainFailure { partial: chain, error })),
    }
}

/// Runs SGLD appending to `chain`, which holds the completed prefix if an error
/// is returned.
///
/// Streams: `rng.substream(0)` injects noise, `substream(1)` draws probes and
/// `substream(2).substream(t)` drives the roulette at iteration `t`.
pub fn run_sgld_into(
    data: &Dataset,
    priors: &Priors,
    cfg: &SgldConfig,
    init: [f64; 3],
    rng: &RngStream,
    chain: &mut SampleChain,
) -> Result<()> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let pre = Preconditioner::new(cfg.preconditioner)?;
    let mut noise = rng.substream(0);
    let mut probe_rng = rng.substream(1);
    let roulette = rng.substream(2);
    let mut estimator: Option<GradientEstimator> = None;
    let mut batch: Vec<[f64; 3]> = Vec::with_capacity(cfg.variance_batch);
    let mut frozen_eps: Option<f64> = None;
    let mut psi = init;
    let offset = chain.samples.len();

    for t in 1..=cfg.total_iters {
        let diverged = |state: [f64; 3]| Error::Diverged { iteration: t, state };
        let eps = frozen_eps.unwrap_or_else(|| schedule.at(t));
        let theta = HyperParams::from_log(psi).map_err(|_| diverged(psi))?;
        let g = match cfg.gradient {
            GradientMode::Exact => exact_log_gradient(&theta, data)?,
            GradientMode::Stochastic => {
                if (t - 1) % cfg.probe_redraw_period == 0 {
                    match estimator.as_mut() {
                        Some(e) => e.redraw(data.n(), cfg.num_probes, &mut probe_rng)?,
                        None => {
                            estimator = Some(GradientEstimator::new(
                                data.n(),
                                cfg.num_probes,
                                cfg.warm_start,
                                &mut probe_rng,
                            )?)
                        }
                    }
                }
                let est = estimator.as_mut().expect("estimator initialised on the first iteration");
                let r = est
                    .estimate(&theta, data, &cfg.solver, &roulette.substream(t as u64))
                    .map_err(|e| e.context(format!("SGLD iteration {t}")))?;
                chain.solver_iterations += r.solver_iterations as u64;
                r.g_tilde
            }
        };
        let pg = log_prior_gradient(&theta, priors);
        batch.push([g[0] + pg[0], g[1] + pg[1], g[2] + pg[2]]);
        let noise_rng = cfg.inject_noise.then_some(&mut noise);
        psi = sgld_step(psi, g, pg, eps, &pre, noise_rng).map_err(|e| match e {
            Error::Diverged { state, .. } => diverged(state),
            other => other,
        })?;
        chain.samples.push(psi);
        chain.step_sizes.push(eps);

        if t % cfg.variance_batch == 0 {
            let v = sample_covariance(&batch);
            let ratio = langevin_ratio(eps, pre.matrix(), &v)?;
            chain.gradient_variance_trace.push(VarianceBatch {
                iteration: t,
                v,
                ratio: ratio.value,
                repaired: ratio.repaired,
            });
            if frozen_eps.is_none() && cfg.freeze_threshold.is_some_and(|th| ratio.value < th) {
                frozen_eps = Some(eps);
                chain.frozen_at = Some(offset + t);
            }
            batch.clear();
        }
        chain.burn_in = chain.frozen_at.unwrap_or(chain.samples.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{log_posterior, GammaPrior};
    use crate::testutil::random_dataset;
    use proptest::prelude::*;

    #[test]
    fn schedule_hits_endpoints() {
        let s = StepSchedule::from_endpoints(1e-1, 1e-4, 40_000, 1.0).unwrap();
        assert!((s.at(1) - 1e-1).abs() < 1e-15);
        assert!((s.at(40_000) - 1e-4).abs() < 1e-16);
        let s = StepSchedule::from_endpoints(0.5, 0.01, 100, 0.7).unwrap();
        assert!((s.at(1) - 0.5).abs() < 1e-14);
        assert!((s.at(100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_gamma() {
        assert!(StepSchedule::from_endpoints(0.1, 0.01, 100, 0.5).is_err());
        assert!(StepSchedule::from_endpoints(0.1, 0.01, 100, 1.1).is_err());
        assert!(StepSchedule::from_endpoints(0.01, 0.1, 100, 1.0).is_err());
    }

    #[test]
    fn zero_drift_without_noise_is_fixed_point() {
        let psi = [0.3, -1.0, 2.0];
        let out = sgld_step(psi, [1.0, -2.0, 0.5], [-1.0, 2.0, -0.5], 0.1, &Preconditioner::identity(), None).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn identity_preconditioner_gives_gradient_ascent() {
        let out = sgld_step([0.0; 3], [1.0, 2.0, 3.0], [0.0; 3], 0.2, &Preconditioner::identity(), None).unwrap();
        for (o, g) in out.iter().zip([1.0, 2.0, 3.0]) {
            assert!((o - 0.1 * g).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_update_is_divergence() {
        let err = sgld_step([0.0; 3], [f64::MAX, 0.0, 0.0], [f64::MAX, 0.0, 0.0], 1.0, &Preconditioner::identity(), None)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn noise_has_covariance_eps_m() {
        let m = Mat3::new(2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.5);
        let pre = Preconditioner::new(m).unwrap();
        let mut rng = RngStream::new(3);
        let eps = 0.04;
        let draws: Vec<[f64; 3]> = (0..100_000)
            .map(|_| sgld_step([0.0; 3], [0.0; 3], [0.0; 3], eps, &pre, Some(&mut rng)).unwrap())
            .collect();
        let c = sample_covariance(&draws) / eps;
        assert!((c - m).abs().max() < 0.03, "{c}");
    }

    fn small_config(total: usize) -> SgldConfig {
        SgldConfig {
            total_iters: total,
            eps_start: 0.05,
            eps_end: 1e-3,
            variance_batch: 10,
            probe_redraw_period: 5,
            num_probes: 2,
            ..SgldConfig::default()
        }
    }

    #[test]
    fn never_freezes_without_threshold() {
        let data = random_dataset(30, 2, 1);
        let cfg = SgldConfig { freeze_threshold: None, ..small_config(60) };
        let chain = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, -1.0], &RngStream::new(1)).unwrap();
        let s = cfg.schedule().unwrap();
        assert!(chain.frozen_at.is_none());
        assert_eq!(chain.burn_in, chain.len());
        for (t, e) in chain.step_sizes.iter().enumerate() {
            assert_eq!(*e, s.at(t + 1));
        }
        assert_eq!(chain.gradient_variance_trace.len(), 6);
        chain.validate().unwrap();
    }

    #[test]
    fn freeze_holds_step_constant() {
        let data = random_dataset(30, 2, 2);
        let cfg = SgldConfig { freeze_threshold: Some(1e6), ..small_config(60) };
        let chain = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, -1.0], &RngStream::new(2)).unwrap();
        assert_eq!(chain.frozen_at, Some(10));
        assert_eq!(chain.burn_in, 10);
        assert!(chain.step_sizes[9..].iter().all(|&e| e == chain.step_sizes[9]));
        chain.validate().unwrap();
    }

    #[test]
    fn chains_are_reproducible() {
        let data = random_dataset(30, 2, 3);
        let cfg = small_config(40);
        let a = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, -1.0], &RngStream::new(9)).unwrap();
        let b = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, -1.0], &RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        let c = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, -1.0], &RngStream::new(10)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn divergence_keeps_partial_chain() {
        let data = random_dataset(20, 1, 4);
        let cfg = SgldConfig {
            gradient: GradientMode::Exact,
            eps_start: 1e6,
            eps_end: 1e5,
            ..small_config(50)
        };
        let fail = run_sgld(&data, &Priors::default(), &cfg, [0.0, 0.0, 0.0], &RngStream::new(4)).unwrap_err();
        assert!(matches!(fail.error.root(), Error::Diverged { .. } | Error::NotPositiveDefinite));
        assert!(fail.partial.len() < 50);
        fail.partial.validate().unwrap();
    }

    #[test]
    fn noise_free_exact_gradient_ascent_does_not_decrease_posterior() {
        let data = random_dataset(40, 2, 5);
        let priors = Priors::shared(GammaPrior::default());
        let cfg = SgldConfig {
            gradient: GradientMode::Exact,
            inject_noise: false,
            eps_start: 0.02,
            eps_end: 0.005,
            freeze_threshold: None,
            ..small_config(400)
        };
        let chain = run_sgld(&data, &priors, &cfg, [0.5, 0.5, -0.5], &RngStream::new(5)).unwrap();
        let lp: Vec<f64> = chain.samples.iter().map(|s| log_posterior(*s, &data, &priors).unwrap()).collect();
        for w in (100..lp.len()).step_by(100) {
            let window = &lp[w..(w + 100).min(lp.len())];
            for pair in window.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-3, "{} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn root_of_preconditioner_squares_back() {
        let m = Mat3::new(0.3, 0.05, 0.01, 0.05, 0.2, -0.02, 0.01, -0.02, 0.1);
        let r = crate::linalg3::sqrtm_psd(&m);
        assert!((r * r - m).abs().max() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn schedule_strictly_decreasing(start in 1e-3f64..1.0, ratio in 1e-4f64..0.9, total in 2usize..100_000, gamma in 0.51f64..1.0) {
            let s = StepSchedule::from_endpoints(start, start * ratio, total, gamma).unwrap();
            let mut prev = f64::INFINITY;
            for t in [1, 2, total / 2 + 1, total] {
                let e = s.at(t);
                prop_assert!(e > 0.0);
                prop_assert!(e <= prev);
                prev = e;
            }
            prop_assert!(s.at(2) < s.at(1));
        }
    }
}
