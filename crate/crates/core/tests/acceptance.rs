//! End-to-end acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits non-zero if any fails.
//!
//! Positional arguments select criteria by number or by a substring of their
//! name, e.g. `cargo test --test acceptance -- 3 roulette`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use ulisse_gp::diagnostics::{effective_sample_size, psrf_summary};
use ulisse_gp::gradients::{
    exact_gradient, exact_log_gradient, log_marginal_likelihood, stochastic_gradient, trace_probe_sample, Priors,
};
use ulisse_gp::kernel::CmvpOptions;
use ulisse_gp::linalg3::Mat3;
use ulisse_gp::predictive::{predict_at, predict_mc};
use ulisse_gp::samplers::{
    dispersed_init, estimate_preconditioner, map_estimate, mh_sample, run_sgld, sgld_step, MhConfig, Preconditioner,
    SampleChain, SgldConfig,
};
use ulisse_gp::solvers::{cg_solve, condition_number, pcg_solve, CgConfig, ConditionMode};
use ulisse_gp::synthetic::regression_dataset;
use ulisse_gp::ulisse::{expected_roulette_steps, ulisse_solve, UlisseConfig};
use ulisse_gp::{Dataset, HyperParams, RngStream};

type Verdict = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "gradient_oracle", budget: secs(30), run: c01_gradient_oracle },
        Criterion { id: 2, name: "solver_exactness", budget: secs(120), run: c02_solver_exactness },
        Criterion { id: 3, name: "ulisse_unbiased", budget: secs(600), run: c03_ulisse_unbiased },
        Criterion { id: 4, name: "roulette_length", budget: secs(60), run: c04_roulette_length },
        Criterion { id: 5, name: "trace_probe_unbiased", budget: secs(60), run: c05_trace_probe },
        Criterion { id: 6, name: "stochastic_gradient", budget: secs(900), run: c06_stochastic_gradient },
        Criterion { id: 7, name: "sgld_mh_agreement", budget: secs(3600), run: c07_sgld_mh_agreement },
        Criterion { id: 8, name: "sgld_convergence", budget: secs(3600), run: c08_sgld_convergence },
        Criterion { id: 9, name: "langevin_sanity", budget: secs(60), run: c09_langevin },
        Criterion { id: 10, name: "condition_number", budget: secs(60), run: c10_condition_number },
        Criterion { id: 11, name: "predictive_oracle", budget: secs(60), run: c11_predictive },
        Criterion { id: 12, name: "reproducibility", budget: secs(600), run: c12_reproducibility },
    ];

    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        for c in &criteria {
            println!("c{:02}_{}: test", c.id, c.name);
        }
        return ExitCode::SUCCESS;
    }
    let selected: Vec<&Criterion> = criteria
        .iter()
        .filter(|c| {
            args.is_empty() || args.iter().any(|a| a.parse::<usize>().map_or(c.name.contains(a.as_str()), |n| n == c.id))
        })
        .collect();

    let mut failures = 0;
    for c in selected {
        let start = Instant::now();
        let verdict = (c.run)();
        let elapsed = start.elapsed();
        let over = if elapsed > c.budget { format!(" [over {}s budget]", c.budget.as_secs()) } else { String::new() };
        match verdict {
            Ok(detail) => {
                println!("PASS {:>2} {:<22} {:>8.1}s  {detail}{over}", c.id, c.name, elapsed.as_secs_f64())
            }
            Err(detail) => {
                failures += 1;
                println!("FAIL {:>2} {:<22} {:>8.1}s  {detail}{over}", c.id, c.name, elapsed.as_secs_f64())
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn must<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

// ---- independent oracles ----

fn sqdist(data: &Dataset, i: usize, j: usize) -> f64 {
    data.row(i).iter().zip(data.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Dense `K` built entry by entry from the covariance formula.
fn oracle_k(t: [f64; 3], data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    DMatrix::from_fn(n, n, |i, j| t[0] * (-t[1] * sqdist(data, i, j)).exp() + if i == j { t[2] } else { 0.0 })
}

fn oracle_dk(t: [f64; 3], data: &Dataset, p: usize) -> DMatrix<f64> {
    let n = data.n();
    DMatrix::from_fn(n, n, |i, j| {
        let r2 = sqdist(data, i, j);
        match p {
            0 => (-t[1] * r2).exp(),
            1 => -t[0] * r2 * (-t[1] * r2).exp(),
            _ => f64::from(i == j),
        }
    })
}

fn exp1(rng: &mut RngStream) -> f64 {
    -(1.0 - rng.uniform()).ln()
}

/// Draw from Gamma(1, 1) per component.
fn gamma11(rng: &mut RngStream) -> HyperParams {
    HyperParams::new(exp1(rng), exp1(rng), exp1(rng)).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

struct Moments {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

impl Moments {
    fn of(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v / m as f64;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *a += (v - mu) * (v - mu) / (m - 1) as f64;
            }
        }
        Moments { mean, var, count: m }
    }

    fn se(&self, i: usize) -> f64 {
        (self.var[i] / self.count as f64).sqrt()
    }
}

fn deterministic_cg(epsilon: f64) -> CgConfig {
    CgConfig { cmvp: CmvpOptions { deterministic: true, ..CmvpOptions::default() }, ..CgConfig::with_epsilon(epsilon) }
}

fn ulisse_cfg(q: f64, beta: f64) -> UlisseConfig {
    UlisseConfig { q, beta, base: deterministic_cg(1e-8), num_replicas: 1 }
}

// ---- 1 ----

fn c01_gradient_oracle() -> Verdict {
    let (data, _) = must(regression_dataset(200, 8, 11), "data")?;
    let mut rng = RngStream::new(101);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let theta = gamma11(&mut rng);
        let g = must(exact_gradient(&theta, &data), "exact gradient")?;
        let t = theta.natural();
        for p in 0..3 {
            let h = 1e-4 * t[p];
            let shifted = |s: f64| {
                let mut v = t;
                v[p] += s;
                log_marginal_likelihood(&HyperParams::new(v[0], v[1], v[2]).unwrap(), &data).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let e = (g[p] - fd).abs() / fd.abs();
            worst = worst.max(e);
            if !(e < 1e-5) {
                return Err(format!("draw {draw} θ={t:?} component {p}: exact {} vs fd {fd} (rel {e:.2e})", g[p]));
            }
        }
    }
    Ok(format!("20 draws, worst rel err {worst:.2e} < 1e-5"))
}

// ---- 2 ----

fn c02_solver_exactness() -> Verdict {
    let (data, _) = must(regression_dataset(500, 8, 12), "data")?;
    let b = data.y().to_vec();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rng = RngStream::new(102);
    let (mut accepted, mut skipped) = (0, 0);
    let (mut worst_cg, mut worst_pcg) = (0.0f64, 0.0f64);
    while accepted < 50 {
        let theta = gamma11(&mut rng);
        let kappa = must(condition_number(&theta, &data, ConditionMode::Exact), "condition number")?;
        if !(kappa < 1e8) {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let k = oracle_k(theta.natural(), &data);
        let exact: Vec<f64> = k.cholesky().ok_or("oracle Cholesky failed")?.solve(&DVector::from_vec(b.clone())).iter().copied().collect();
        // rel err ≤ κ ‖r‖ / ‖b‖, so a residual of 1e-7 ‖b‖ / κ bounds the error by 1e-7.
        let eps = (1e-7 * b_norm / kappa).max(1e-15 * b_norm);
        let cfg = CgConfig { max_iters: Some(20 * data.n()), ..deterministic_cg(eps) };
        let cg = must(cg_solve(&theta, &data, &b, &cfg), "cg")?;
        let pcg = must(pcg_solve(&theta, &data, &b, 0.1, &cfg, &CgConfig::with_epsilon(1e-12)), "pcg")?;
        let (e1, e2) = (rel_err(&cg.solution, &exact), rel_err(&pcg.solution, &exact));
        worst_cg = worst_cg.max(e1);
        worst_pcg = worst_pcg.max(e2);
        if !(e1 < 1e-6 && e2 < 1e-6) {
            return Err(format!("θ={:?} κ={kappa:.2e}: cg {e1:.2e} pcg {e2:.2e}", theta.natural()));
        }
    }
    Ok(format!("50 draws ({skipped} skipped with κ ≥ 1e8), worst rel err cg {worst_cg:.2e} pcg {worst_pcg:.2e}"))
}

// ---- 3 ----

fn ulisse_system() -> (Dataset, HyperParams, Vec<f64>) {
    let (data, _) = regression_dataset(200, 8, 13).unwrap();
    let theta = HyperParams::new(1.0, 1.0, 0.1).unwrap();
    let b = data.y().to_vec();
    (data, theta, b)
}

fn ulisse_estimates(count: usize, seed: u64) -> Result<Vec<Vec<f64>>, String> {
    let (data, theta, b) = ulisse_system();
    let cfg = ulisse_cfg(1.0, 1.0);
    let root = RngStream::new(seed);
    (0..count)
        .map(|i| {
            let s = must(ulisse_solve(&theta, &data, &b, &cfg, &root.substream(i as u64)), "ulisse")?;
            Ok(s.estimates.into_iter().next().unwrap())
        })
        .collect()
}

fn c03_ulisse_unbiased() -> Verdict {
    let (data, theta, b) = ulisse_system();
    let exact = oracle_k(theta.natural(), &data).cholesky().unwrap().solve(&DVector::from_vec(b));
    let est = ulisse_estimates(20_000, 103)?;
    let m = Moments::of(&est);
    let n = exact.len();
    let err: f64 = (0..n).map(|i| (m.mean[i] - exact[i]).powi(2)).sum::<f64>().sqrt();
    let agg_se: f64 = (0..n).map(|i| m.se(i).powi(2)).sum::<f64>().sqrt();
    let big_z = (0..n).filter(|&i| ((m.mean[i] - exact[i]) / m.se(i)).abs() > 3.0).count();
    let frac = big_z as f64 / n as f64;
    check(
        err <= 4.0 * agg_se && frac < 0.01,
        format!("‖mean − exact‖ = {err:.3e} vs 4·SE = {:.3e}; |z| > 3 in {big_z}/{n}", 4.0 * agg_se),
    )
}

// ---- 4 ----

fn roulette_lengths(beta: f64, count: usize, seed: u64) -> Result<Vec<usize>, String> {
    // Low dimension and small noise keep CG running well past the threshold, so
    // no replica is cut short.
    let (data, _) = regression_dataset(200, 2, 13).unwrap();
    let b = data.y().to_vec();
    let theta = HyperParams::new(1.0, 0.5, 0.01).unwrap();
    let cfg = UlisseConfig { num_replicas: count, base: deterministic_cg(1e-12), ..ulisse_cfg(1.0, beta) };
    let s = must(ulisse_solve(&theta, &data, &b, &cfg, &RngStream::new(seed)), "ulisse")?;
    if !s.report.converged {
        return Err("roulette run hit the iteration cap".into());
    }
    // The run must end because every replica stopped, not because CG converged
    // and cut the continuation short.
    if s.report.final_residual_norm < cfg.base.epsilon {
        return Err(format!("CG converged {} steps past the threshold, truncating the roulette", s.report.iterations - s.l));
    }
    Ok(s.roulette_steps)
}

fn c04_roulette_length() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (beta, seed) in [(1.0, 104), (100.0, 204)] {
        let steps = roulette_lengths(beta, 50_000, seed)?;
        // Integer sums keep a constant sample exactly constant.
        let m = steps.len() as f64;
        let sum: usize = steps.iter().sum();
        let sum_sq: usize = steps.iter().map(|k| k * k).sum();
        let mean = sum as f64 / m;
        let var = (sum_sq as f64 - sum as f64 * mean) / (m - 1.0);
        let se = (var / m).sqrt();
        let want = expected_roulette_steps(beta);
        ok &= (mean - want).abs() <= 4.0 * se;
        parts.push(format!("β={beta}: {mean:.4} vs {want:.4} (SE {se:.1e})"));
    }
    check(ok, parts.join("; "))
}

// ---- 5 ----

fn trace_samples(count: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Dataset, HyperParams), String> {
    let (data, _) = must(regression_dataset(50, 2, 15), "data")?;
    let theta = HyperParams::new(1.3, 0.6, 0.2).unwrap();
    let mut rng = RngStream::new(seed);
    let cfg = deterministic_cg(1e-10);
    let rows = (0..count)
        .map(|_| {
            let r = rng.rademacher(data.n());
            must(trace_probe_sample(&theta, &data, &r, &cfg), "probe").map(|t| t.to_vec())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rows, data, theta))
}

fn c05_trace_probe() -> Verdict {
    let (rows, data, theta) = trace_samples(10_000, 105)?;
    let t = theta.natural();
    let k_inv = oracle_k(t, &data).try_inverse().ok_or("oracle inverse failed")?;
    let m = Moments::of(&rows);
    let mut parts = Vec::new();
    let mut ok = true;
    for p in 0..3 {
        let exact = (&k_inv * oracle_dk(t, &data, p)).trace();
        let z = (m.mean[p] - exact) / m.se(p);
        ok &= z.abs() <= 4.0;
        parts.push(format!("z{p}={z:+.2}"));
    }
    check(ok, parts.join(" "))
}

// ---- 6 ----

fn gradient_system() -> (Dataset, HyperParams) {
    (regression_dataset(200, 8, 16).unwrap().0, HyperParams::new(1.0, 1.0, 0.1).unwrap())
}

fn gradient_draws(q: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, String> {
    let (data, theta) = gradient_system();
    let cfg = ulisse_cfg(q, 1.0);
    let root = RngStream::new(seed);
    (0..count)
        .map(|i| {
            must(stochastic_gradient(&theta, &data, 1, &cfg, None, &root.substream(i as u64)), "gradient")
                .map(|e| e.g_tilde.to_vec())
        })
        .collect()
}

fn c06_stochastic_gradient() -> Verdict {
    let (data, theta) = gradient_system();
    let exact = must(exact_log_gradient(&theta, &data), "exact")?;
    let seed = 106;
    let q1 = Moments::of(&gradient_draws(1.0, 5_000, seed)?);
    // Same probes at every q; only the solver's truncation differs. A threshold
    // below ε makes the solves plain CG. The q = 0.1 excess variance is a few
    // parts in 10^4 of the probe variance, so the ordering needs more draws to
    // resolve than the mean does.
    let order_draws = 40_000;
    let q01 = Moments::of(&gradient_draws(0.1, order_draws, seed)?);
    let q_exact = Moments::of(&gradient_draws(1e-12, order_draws, seed)?);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in 0..3 {
        let z = (q1.mean[p] - exact[p]) / q1.se(p);
        let order = q_exact.var[p] < q01.var[p] && q01.var[p] < q1.var[p];
        ok &= z.abs() <= 4.0 && order;
        parts.push(format!(
            "p{p}: z={z:+.2} var {:.3e} < {:.3e} < {:.3e}{}",
            q_exact.var[p],
            q01.var[p],
            q1.var[p],
            if order { "" } else { " (order violated)" }
        ));
    }
    check(ok, parts.join("; "))
}

// ---- 7 & 8 ----

struct PosteriorRuns {
    sgld: Vec<SampleChain>,
    mh: SampleChain,
    mh_acceptance_after_adapt: f64,
}

fn agreement_data() -> Dataset {
    regression_dataset(500, 8, 2024).unwrap().0
}

fn paper_sgld(data: &Dataset, priors: &Priors, total_iters: usize) -> Result<(SgldConfig, HyperParams), String> {
    let map = must(map_estimate(data, priors, HyperParams::new(1.0, 0.1, 0.3).unwrap(), 500), "MAP")?;
    if !map.converged {
        return Err(format!("MAP did not converge (grad norm {:.2e})", map.grad_norm));
    }
    let pre = must(estimate_preconditioner(data, priors, &map.theta), "preconditioner")?;
    let mut cfg = SgldConfig { total_iters, preconditioner: pre.m, ..SgldConfig::default() };
    cfg.solver.base.cmvp.deterministic = true;
    Ok((cfg, map.theta))
}

fn sgld_chains(data: &Dataset, cfg: &SgldConfig, center: [f64; 3], chains: usize, seed: u64) -> Result<Vec<SampleChain>, String> {
    let priors = Priors::default();
    let pre = must(Preconditioner::new(cfg.preconditioner), "preconditioner")?;
    let root = RngStream::new(seed);
    let init_root = root.substream(u64::MAX);
    (0..chains)
        .map(|c| {
            let init = dispersed_init(center, &pre, &mut init_root.substream(c as u64));
            run_sgld(data, &priors, cfg, init, &root.substream(c as u64)).map_err(|f| format!("chain {c}: {}", f.error))
        })
        .collect()
}

fn mh_config(init: HyperParams, num_iters: usize, burn_in: usize) -> MhConfig {
    MhConfig { num_iters, burn_in, adapt_iters: burn_in, init, ..MhConfig::default() }
}

fn posterior_runs() -> &'static Result<PosteriorRuns, String> {
    static RUNS: std::sync::OnceLock<Result<PosteriorRuns, String>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let data = agreement_data();
        let priors = Priors::default();
        let (cfg, map) = paper_sgld(&data, &priors, 40_000)?;
        let sgld = sgld_chains(&data, &cfg, map.psi(), 4, 7)?;
        let mh_cfg = mh_config(map, 50_000, 10_000);
        let mh = must(mh_sample(&data, &priors, &mh_cfg, &RngStream::new(8)), "MH")?;
        let acc = mh.accepted.as_ref().unwrap();
        let tail = &acc[mh_cfg.adapt_iters..];
        let rate = tail.iter().filter(|&&a| a).count() as f64 / tail.len() as f64;
        Ok(PosteriorRuns { sgld, mh, mh_acceptance_after_adapt: rate })
    })
}

fn c07_sgld_mh_agreement() -> Verdict {
    let runs = posterior_runs().as_ref().map_err(Clone::clone)?;
    let rate = runs.mh_acceptance_after_adapt;
    let mut ok = (0.2..=0.4).contains(&rate);
    let mut parts = vec![format!("MH acceptance {rate:.3}")];
    let names = ["log σ", "log τ", "log λ"];
    for (p, name) in names.iter().enumerate() {
        let s: Vec<Vec<f64>> = runs.sgld.iter().flat_map(|c| c.posterior_component(p)).map(|v| vec![v]).collect();
        let h: Vec<Vec<f64>> = runs.mh.posterior_component(p).into_iter().map(|v| vec![v]).collect();
        if s.len() < 2 {
            return Err("SGLD chains produced no post-freeze samples".into());
        }
        let (ms, mh) = (Moments::of(&s), Moments::of(&h));
        let (sd_s, sd_h) = (ms.var[0].sqrt(), mh.var[0].sqrt());
        let dm = (ms.mean[0] - mh.mean[0]).abs() / sd_h;
        let dr = (sd_s / sd_h - 1.0).abs();
        ok &= dm <= 0.2 && dr <= 0.25;
        parts.push(format!("{name}: Δmean/sd {dm:.3} ratio−1 {dr:.3}"));
    }
    check(ok, parts.join("; "))
}

fn c08_sgld_convergence() -> Verdict {
    let runs = posterior_runs().as_ref().map_err(Clone::clone)?;
    let frozen: Vec<Option<usize>> = runs.sgld.iter().map(|c| c.frozen_at).collect();
    if frozen.iter().any(Option::is_none) {
        return Err(format!("not every chain froze: {frozen:?}"));
    }
    let post: Vec<Vec<[f64; 3]>> = runs.sgld.iter().map(|c| c.posterior().iter().take(10_000).copied().collect()).collect();
    let len = post.iter().map(Vec::len).min().unwrap_or(0);
    let mut reached = None;
    let mut last = None;
    for l in (500..=len.min(10_000)).step_by(500) {
        let prefix: Vec<Vec<[f64; 3]>> = post.iter().map(|c| c[..l].to_vec()).collect();
        let s = must(psrf_summary(&prefix, false), "psrf")?;
        last = Some((l, s.per_parameter));
        if s.per_parameter.iter().all(|&r| r < 1.1) {
            reached = Some((l, s.per_parameter));
            break;
        }
    }
    match reached {
        Some((l, r)) => Ok(format!("frozen_at {frozen:?}; PSRF {r:.3?} < 1.1 after {l} post-freeze iterations")),
        None => Err(format!("frozen_at {frozen:?}; PSRF never below 1.1 within {len} post-freeze iterations (last {last:.3?})")),
    }
}

// ---- 9 ----

fn langevin_trace(steps: usize, seed: u64) -> Result<Vec<[f64; 3]>, String> {
    let sigma = Mat3::new(0.04, 0.01, 0.0, 0.01, 0.05, 0.005, 0.0, 0.005, 0.03);
    let prec = sigma.try_inverse().unwrap();
    let pre = Preconditioner::identity();
    let mut rng = RngStream::new(seed);
    let mut psi = [0.0; 3];
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = -(prec * nalgebra::Vector3::from(psi));
        psi = must(sgld_step(psi, [g[0], g[1], g[2]], [0.0; 3], 1e-3, &pre, Some(&mut rng)), "step")?;
        out.push(psi);
    }
    Ok(out)
}

fn c09_langevin() -> Verdict {
    let target = [0.04, 0.05, 0.03];
    let trace = langevin_trace(1_000_000, 109)?;
    let rows: Vec<Vec<f64>> = trace.iter().map(|s| s.to_vec()).collect();
    let m = Moments::of(&rows);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in 0..3 {
        let r = m.var[p] / target[p] - 1.0;
        ok &= r.abs() <= 0.05;
        let ess = effective_sample_size(&rows.iter().map(|v| v[p]).collect::<Vec<_>>()).map(|e| e.value).unwrap_or(f64::NAN);
        parts.push(format!("var{p} {:+.2}% (ESS {ess:.0})", 100.0 * r));
    }
    check(ok, parts.join(" "))
}

// ---- 10 ----

fn c10_condition_number() -> Verdict {
    let (data, _) = must(regression_dataset(50, 3, 20), "data")?;
    let mut rng = RngStream::new(110);
    let k0 = must(condition_number(&HyperParams::new(0.0, 0.7, 0.3).unwrap(), &data, ConditionMode::Exact), "κ")?;
    if k0 != 1.0 {
        return Err(format!("σ = 0 gives κ = {k0}"));
    }
    let grid: Vec<f64> = (0..12).map(|i| 1e-3 * 2.8f64.powi(i)).collect();
    for _ in 0..10 {
        let (s, t) = (exp1(&mut rng), exp1(&mut rng));
        let mut prev = f64::INFINITY;
        for &l in &grid {
            let k = must(condition_number(&HyperParams::new(s, t, l).unwrap(), &data, ConditionMode::Exact), "κ")?;
            if k > prev {
                return Err(format!("κ increased from {prev} to {k} at σ={s} τ={t} λ={l}"));
            }
            prev = k;
        }
    }
    let mut worst = 0.0f64;
    for t in [[1.0, 1.0, 0.1], [2.0, 0.3, 0.5], [0.5, 2.0, 1.0], [1.5, 0.05, 0.2]] {
        let k = must(condition_number(&HyperParams::new(t[0], t[1], t[2]).unwrap(), &data, ConditionMode::Exact), "κ")?;
        let sv = oracle_k(t, &data).singular_values();
        let oracle = sv.max() / sv.min();
        let e = (k - oracle).abs() / oracle;
        worst = worst.max(e);
        if e > 1e-10 {
            return Err(format!("θ={t:?}: κ {k} vs oracle {oracle} (rel {e:.1e})"));
        }
    }
    Ok(format!("κ(σ=0) = 1; monotone over 10×12 grid; oracle rel err {worst:.1e}"))
}

// ---- 11 ----

fn c11_predictive() -> Verdict {
    let (data, _) = must(regression_dataset(50, 3, 21), "data")?;
    let t = [1.2, 0.4, 0.1];
    let theta = HyperParams::new(t[0], t[1], t[2]).unwrap();
    let chol = oracle_k(t, &data).cholesky().ok_or("oracle Cholesky failed")?;
    let alpha = chol.solve(&DVector::from_column_slice(data.y()));
    let mut rng = RngStream::new(111);
    let points: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
    let mut worst = 0.0f64;
    for x in &points {
        let kx = DVector::from_fn(data.n(), |i, _| {
            let r2: f64 = data.row(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            t[0] * (-t[1] * r2).exp()
        });
        let mean = kx.dot(&alpha);
        let var = t[0] + t[2] - kx.dot(&chol.solve(&kx));
        let (m, v) = must(predict_at(&theta, &data, x), "predict_at")?;
        let e = ((m - mean).abs() / mean.abs()).max((v - var).abs() / var);
        worst = worst.max(e);
        if !(e < 1e-6) {
            return Err(format!("x={x:?}: ({m}, {v}) vs oracle ({mean}, {var})"));
        }
    }

    let samples: Vec<[f64; 3]> = (0..40).map(|i| {
        let w = i as f64 / 40.0;
        [t[0].ln() + 0.3 * (3.0 * w).sin(), t[1].ln() + 0.2 * w, t[2].ln() - 0.4 * (5.0 * w).cos()]
    }).collect();
    let chain = SampleChain {
        init: samples[0],
        step_sizes: (0..40).map(|i| if i < 7 { 0.1 / (i + 1) as f64 } else { 0.01 }).collect(),
        samples,
        frozen_at: Some(7),
        burn_in: 7,
        accepted: None,
        gradient_variance_trace: Vec::new(),
        seed: 0,
        solver_iterations: 0,
    };
    let stride = 3;
    let res = must(predict_mc(&chain, &data, &points, stride, false), "predict_mc")?;
    let kept: Vec<[f64; 3]> = chain.samples[7..].iter().step_by(stride).copied().collect();
    let mut comps = Vec::new();
    for psi in &kept {
        let th = HyperParams::from_log(*psi).unwrap();
        comps.push(points.iter().map(|x| predict_at(&th, &data, x).unwrap()).collect::<Vec<_>>());
    }
    let s = kept.len() as f64;
    let mut worst_mix = 0.0f64;
    for j in 0..points.len() {
        let mean = comps.iter().map(|c| c[j].0).sum::<f64>() / s;
        let var = comps.iter().map(|c| c[j].1 + (c[j].0 - mean).powi(2)).sum::<f64>() / s;
        let e = ((res.mean[j] - mean).abs() / mean.abs().max(1.0)).max((res.variance[j] - var).abs() / var.max(1.0));
        worst_mix = worst_mix.max(e);
    }
    check(
        res.num_samples == kept.len() && worst_mix <= 1e-12,
        format!("predict_at worst rel err {worst:.1e}; mixture over {} samples, worst {worst_mix:.1e}", kept.len()),
    )
}

// ---- 12 ----

fn c12_reproducibility() -> Verdict {
    let mut parts = Vec::new();
    let mut same = |name: &str, a: Vec<u64>, b: Vec<u64>| {
        let eq = a == b;
        parts.push(format!("{name} {}", if eq { "identical" } else { "DIFFERENT" }));
        eq
    };
    let bits = |rows: &[Vec<f64>]| rows.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    let chain_bits = |c: &SampleChain| c.samples.iter().flatten().chain(&c.step_sizes).map(|v| v.to_bits()).collect::<Vec<_>>();

    let mut ok = true;
    ok &= same("ulisse", bits(&ulisse_estimates(500, 103)?), bits(&ulisse_estimates(500, 103)?));
    let r = |s| roulette_lengths(1.0, 5_000, s).map(|v| v.into_iter().map(|k| k as u64).collect::<Vec<_>>());
    ok &= same("roulette", r(104)?, r(104)?);
    ok &= same("trace", bits(&trace_samples(500, 105)?.0), bits(&trace_samples(500, 105)?.0));
    ok &= same("gradient", bits(&gradient_draws(1.0, 200, 106)?), bits(&gradient_draws(1.0, 200, 106)?));
    let l = |s| langevin_trace(10_000, s).map(|t| t.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>());
    ok &= same("langevin", l(109)?, l(109)?);

    let data = agreement_data();
    let priors = Priors::default();
    let (cfg, map) = paper_sgld(&data, &priors, 2_000)?;
    let (cfg2, map2) = paper_sgld(&data, &priors, 2_000)?;
    ok &= same("MAP", map.psi().map(f64::to_bits).to_vec(), map2.psi().map(f64::to_bits).to_vec());
    let a = sgld_chains(&data, &cfg, map.psi(), 2, 7)?;
    let b = sgld_chains(&data, &cfg2, map2.psi(), 2, 7)?;
    ok &= same("sgld", a.iter().flat_map(chain_bits).collect(), b.iter().flat_map(chain_bits).collect());
    let mh = |s| mh_sample(&data, &priors, &mh_config(map, 2_000, 500), &RngStream::new(s)).map_err(|e| e.to_string());
    ok &= same("mh", chain_bits(&mh(8)?), chain_bits(&mh(8)?));
    check(ok, parts.join(", "))
}
