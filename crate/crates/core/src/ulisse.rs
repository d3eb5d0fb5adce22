//! Unbiased early-stopped conjugate gradients.
//!
//! CG is run until the residual norm drops below the early-stop threshold
//! `α = q√n` at iteration `l`. The partial solution `s_l` is kept, and each
//! replica then continues a randomized telescoping sum over the remaining CG
//! increments `δ_{l+j} = s_{l+j+1} − s_{l+j}`: at continuation step `j` it draws
//! `u_j ~ U[0, 1)` and, if `u_j < 1/w_j` with `w_j = exp(βj)`, adds
//! `(∏_{r ≤ j} w_r) δ_{l+j}`; otherwise it stops. Since the probability of
//! reaching step `j` is exactly `∏_{r ≤ j} 1/w_r`, every increment enters with
//! expectation one and the estimate is unbiased for the converged CG solution.
//!
//! Replicas share the CG trajectory and differ only in their uniforms, so two
//! replicas give two conditionally independent unbiased estimates from one run.

use crate::error::{check_len, Error, Result};
use crate::kernel::{Dataset, HyperParams};
use crate::rng::RngStream;
use crate::solvers::{CgConfig, CgState, CovarianceOperator, LinearOperator, SolveReport};

#[derive(Clone, Debug, PartialEq)]
pub struct UlisseConfig {
    /// Early-stop scale: `α = q√n`.
    pub q: f64,
    /// Weight growth rate in `w_r = exp(βr)`.
    pub beta: f64,
    /// Full-convergence threshold, iteration cap and product options.
    pub base: CgConfig,
    pub num_replicas: usize,
}

impl Default for UlisseConfig {
    fn default() -> Self {
        Self { q: 1.0, beta: 1.0, base: CgConfig::default(), num_replicas: 1 }
    }
}

impl UlisseConfig {
    pub fn early_stop_threshold(&self, n: usize) -> f64 {
        self.q * (n as f64).sqrt()
    }

    /// True when `α ≤ ε`, i.e. the solver reduces to plain CG.
    pub fn is_degenerate(&self, n: usize) -> bool {
        self.early_stop_threshold(n) <= self.base.epsilon
    }

    fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(Error::InvalidArgument(format!("q must be positive, got {}", self.q)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.num_replicas == 0 {
            return Err(Error::InvalidArgument("num_replicas must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnbiasedSolution {
    pub estimates: Vec<Vec<f64>>,
    /// Iteration at which the residual first fell below `α` (or the final
    /// iteration count if it never did).
    pub l: usize,
    pub roulette_steps: Vec<usize>,
    /// `report.solution` is the plain CG iterate at termination, suitable as a
    /// warm start; `report.iterations` counts every CG step taken.
    pub report: SolveReport,
}

/// `E[continuation steps] = Σ_j exp(−β j(j+1)/2)`, summed until terms vanish.
pub fn expected_roulette_steps(beta: f64) -> f64 {
    let mut total = 0.0;
    for j in 0.. {
        let term = (-beta * (j * (j + 1)) as f64 / 2.0).exp();
        total += term;
        if term < f64::EPSILON * total * 1e-3 {
            break;
        }
    }
    total
}

#[derive(Clone, Debug)]
struct Replica {
    estimate: Vec<f64>,
    alive: bool,
    steps: usize,
    stream: RngStream,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Prefix,
    Roulette { step: usize },
    Done { converged: bool },
}

/// One ULISSE solve, advanced externally one operator product at a time.
#[derive(Clone, Debug)]
pub struct UlisseRun {
    cg: CgState,
    threshold: f64,
    epsilon: f64,
    beta: f64,
    max_iters: usize,
    l: usize,
    phase: Phase,
    replicas: Vec<Replica>,
    increment: Vec<f64>,
}

impl UlisseRun {
    /// `k_s0` must be `K s0`.
    pub fn new(b: &[f64], s0: Vec<f64>, k_s0: &[f64], cfg: &UlisseConfig, deterministic: bool, rng: &RngStream) -> Self {
        let n = b.len();
        let cg = CgState::new(b, s0, k_s0, deterministic);
        let replicas = (0..cfg.num_replicas)
            .map(|r| Replica {
                estimate: Vec::new(),
                alive: false,
                steps: 0,
                stream: rng.substream(r as u64),
            })
            .collect();
        let mut run = Self {
            cg,
            threshold: cfg.early_stop_threshold(n),
            epsilon: cfg.base.epsilon,
            beta: cfg.beta,
            max_iters: cfg.base.max_iters_for(n),
            l: 0,
            phase: Phase::Prefix,
            replicas,
            increment: vec![0.0; n],
        };
        run.after_iteration();
        run
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done { .. })
    }

    /// The vector whose product with the operator is needed next.
    pub fn pending(&self) -> Option<&[f64]> {
        (!self.is_done()).then(|| self.cg.direction())
    }

    /// Consumes `K d` for the vector returned by [`UlisseRun::pending`].
    pub fn feed(&mut self, k_dir: &[f64]) -> Result<()> {
        match self.phase {
            Phase::Done { .. } => Ok(()),
            Phase::Prefix => {
                self.cg.advance(k_dir, None)?;
                self.after_iteration();
                Ok(())
            }
            Phase::Roulette { step } => {
                self.cg.advance(k_dir, Some(&mut self.increment))?;
                let weight = (self.beta * (step * (step + 1)) as f64 / 2.0).exp();
                for rep in self.replicas.iter_mut().filter(|r| r.alive) {
                    for (e, d) in rep.estimate.iter_mut().zip(&self.increment) {
                        *e += weight * d;
                    }
                    rep.steps += 1;
                }
                self.phase = Phase::Roulette { step: step + 1 };
                self.after_iteration();
                Ok(())
            }
        }
    }

    fn after_iteration(&mut self) {
        let res = self.cg.residual_norm();
        if res < self.epsilon {
            if self.phase == Phase::Prefix {
                self.l = self.cg.iterations();
                for rep in &mut self.replicas {
                    rep.estimate = self.cg.solution().to_vec();
                }
            }
            self.phase = Phase::Done { converged: true };
            return;
        }
        if self.phase == Phase::Prefix {
            if res < self.threshold {
                self.l = self.cg.iterations();
                for rep in &mut self.replicas {
                    rep.estimate = self.cg.solution().to_vec();
                    rep.alive = true;
                }
                self.phase = Phase::Roulette { step: 0 };
            } else if self.cg.iterations() >= self.max_iters {
                self.l = self.cg.iterations();
                for rep in &mut self.replicas {
                    rep.estimate = self.cg.solution().to_vec();
                }
                self.phase = Phase::Done { converged: false };
                return;
            } else {
                return;
            }
        }
        if let Phase::Roulette { step } = self.phase {
            let accept = (-self.beta * step as f64).exp();
            let mut any = false;
            for rep in self.replicas.iter_mut().filter(|r| r.alive) {
                rep.alive = rep.stream.uniform() < accept;
                any |= rep.alive;
            }
            if !any {
                self.phase = Phase::Done { converged: true };
            } else if self.cg.iterations() >= self.max_iters {
                self.phase = Phase::Done { converged: false };
            }
        }
    }

    pub fn finish(self) -> UnbiasedSolution {
        let converged = matches!(self.phase, Phase::Done { converged: true });
        let roulette_steps: Vec<usize> = self.replicas.iter().map(|r| r.steps).collect();
        let report = SolveReport {
            iterations: self.cg.iterations(),
            final_residual_norm: self.cg.residual_norm(),
            converged,
            roulette_steps: roulette_steps.iter().copied().max().unwrap_or(0),
            inner_iterations: 0,
            solution: self.cg.into_solution(),
        };
        UnbiasedSolution {
            estimates: self.replicas.into_iter().map(|r| r.estimate).collect(),
            l: self.l,
            roulette_steps,
            report,
        }
    }
}

/// One system in a batched solve.
#[derive(Clone, Debug)]
pub struct UlisseRequest<'a> {
    pub b: &'a [f64],
    pub initial_guess: Option<&'a [f64]>,
    pub num_replicas: usize,
}

/// Runs several ULISSE solves in lockstep so that each operator pass serves
/// every system still iterating. Results are identical to solving one at a time.
pub fn ulisse_solve_batch<A: LinearOperator>(
    op: &A,
    requests: &[UlisseRequest<'_>],
    cfg: &UlisseConfig,
    streams: &[RngStream],
) -> Result<Vec<UnbiasedSolution>> {
    cfg.validate()?;
    if streams.len() != requests.len() {
        return Err(Error::InvalidArgument("one rng stream per request is required".into()));
    }
    let n = op.dim();
    for (i, r) in requests.iter().enumerate() {
        check_len("b", n, r.b.len()).map_err(|e| e.context(format!("system {i}")))?;
        if let Some(g) = r.initial_guess {
            check_len("initial guess", n, g.len()).map_err(|e| e.context(format!("system {i}")))?;
        }
        if r.num_replicas == 0 {
            return Err(Error::InvalidArgument(format!("system {i}: num_replicas must be at least 1")));
        }
    }
    let guesses: Vec<&[f64]> = requests.iter().filter_map(|r| r.initial_guess).collect();
    let mut k_guesses = op.apply_many(&guesses)?.into_iter();
    let zeros = vec![0.0; n];
    let mut runs: Vec<UlisseRun> = requests
        .iter()
        .zip(streams)
        .map(|(r, stream)| {
            let local = UlisseConfig { num_replicas: r.num_replicas, ..cfg.clone() };
            match r.initial_guess {
                Some(g) => {
                    let kg = k_guesses.next().expect("one product per guess");
                    UlisseRun::new(r.b, g.to_vec(), &kg, &local, op.deterministic(), stream)
                }
                None => UlisseRun::new(r.b, zeros.clone(), &zeros, &local, op.deterministic(), stream),
            }
        })
        .collect();
    loop {
        let active: Vec<usize> = (0..runs.len()).filter(|&i| !runs[i].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let dirs: Vec<&[f64]> = active.iter().map(|&i| runs[i].pending().expect("active")).collect();
        let products = op.apply_many(&dirs)?;
        for (&i, kd) in active.iter().zip(&products) {
            runs[i].feed(kd).map_err(|e| e.context(format!("system {i}")))?;
        }
    }
    Ok(runs.into_iter().map(UlisseRun::finish).collect())
}

pub fn ulisse_solve_op<A: LinearOperator>(op: &A, b: &[f64], cfg: &UlisseConfig, rng: &RngStream) -> Result<UnbiasedSolution> {
    let req = UlisseRequest {
        b,
        initial_guess: cfg.base.initial_guess.as_deref(),
        num_replicas: cfg.num_replicas,
    };
    Ok(ulisse_solve_batch(op, &[req], cfg, std::slice::from_ref(rng))?
        .pop()
        .expect("one system"))
}

/// Unbiased estimate(s) of `K(θ)⁻¹ b`.
pub fn ulisse_solve(
    theta: &HyperParams,
    data: &Dataset,
    b: &[f64],
    cfg: &UlisseConfig,
    rng: &RngStream,
) -> Result<UnbiasedSolution> {
    let op = CovarianceOperator::new(*theta, data, cfg.base.cmvp);
    ulisse_solve_op(&op, b, cfg, rng)
}

/// Two conditionally independent unbiased estimates of `K(θ)⁻¹ b` from a single
/// CG trajectory; `cfg.num_replicas` is overridden to 2.
pub fn paired_ulisse_solve(
    theta: &HyperParams,
    data: &Dataset,
    b: &[f64],
    cfg: &UlisseConfig,
    rng: &RngStream,
) -> Result<UnbiasedSolution> {
    let paired = UlisseConfig { num_replicas: 2, ..cfg.clone() };
    ulisse_solve(theta, data, b, &paired, rng)
}
