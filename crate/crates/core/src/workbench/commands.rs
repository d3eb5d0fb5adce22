//! The CLI subcommands as library functions. Each writes its artifacts plus a
//! `manifest.json` and a resolved `config.toml` into the output directory.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{effective_sample_size, psrf_progression, psrf_summary, running_summary};
use crate::error::{Error, Result};
use crate::gradients::{exact_log_gradient, gradient_relative_error, stochastic_gradient, Priors};
use crate::kernel::{Dataset, HyperParams, Scaler};
use crate::predictive::predict_mc;
use crate::rng::RngStream;
use crate::samplers::{
    dispersed_init, estimate_preconditioner, map_estimate_with, mh_sample, run_sgld, MapOptions, Preconditioner,
    SampleChain,
};
use crate::solvers::{condition_number, condition_sweep, ConditionMode, DENSE_LIMIT};
use crate::synthetic::regression_dataset;

use super::config::{mat3, mat3_rows, ExperimentConfig, InitMode};
use super::data::{load_dataset, load_inputs};
use super::io::{
    read_chain_csv, write_chain_csv, write_diagnostics_csv, write_json, write_predictions_csv, write_rows,
    write_sweep_csv, DiagnosticRow,
};
use super::manifest::{Manifest, ManifestBuilder};

/// Above this many rows the stochastic sampler needs `run.long_run = true`.
pub const LONG_RUN_ROWS: usize = 5_000;

const PARAMS: [&str; 3] = ["log_sigma", "log_tau", "log_lambda"];

pub fn load_configured_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Scaler)> {
    match (&cfg.dataset.path, &cfg.dataset.synthetic) {
        (Some(p), None) => load_dataset(p, cfg.dataset.format, cfg.dataset.subset),
        (None, Some(s)) => regression_dataset(cfg.dataset.subset.map_or(s.n, |m| m.min(s.n)), s.d, s.seed),
        (None, None) => Err(Error::Config(vec!["dataset: set `path` or `synthetic` (or pass --data)".into()])),
        (Some(_), Some(_)) => Err(Error::Config(vec!["dataset: give either `path` or `synthetic`, not both".into()])),
    }
}

struct Session {
    dir: PathBuf,
    manifest: ManifestBuilder,
    pool: rayon::ThreadPool,
}

impl Session {
    fn start(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.run.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io(e).context(format!("creating {}", dir.display())))?;
        let resolved = cfg.to_toml_string()?;
        std::fs::write(dir.join("config.toml"), &resolved)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let workers = pool.current_num_threads();
        let json = serde_json::to_value(cfg)?;
        let manifest = ManifestBuilder::new(command, json, cfg.solver.deterministic, workers);
        Ok(Self { dir, manifest, pool })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.manifest.output(&p);
        p
    }

    fn finish(self) -> Result<Manifest> {
        self.manifest.finish(&self.dir)
    }
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    n: usize,
    d: usize,
    scaler: &'a Scaler,
}

pub fn ingest(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("ingest", cfg)?;
    let (data, scaler) = load_configured_dataset(cfg)?;
    let p = s.path("dataset.json");
    write_json(&p, &DatasetSummary { n: data.n(), d: data.d(), scaler: &scaler })?;
    s.manifest.count("rows", data.n() as u64);
    s.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct MapReport {
    pub subset_rows: usize,
    pub theta: HyperParams,
    pub psi: [f64; 3],
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub converged: bool,
    pub preconditioner: [[f64; 3]; 3],
    pub hessian: [[f64; 3]; 3],
    pub repaired: bool,
}

/// MAP on the first `sgld.map_subset` rows and the Hessian preconditioner there.
pub fn compute_map(cfg: &ExperimentConfig, data: &Dataset, priors: &Priors) -> Result<MapReport> {
    let sub = data.head(cfg.sgld.map_subset.min(data.n()))?;
    if sub.n() > DENSE_LIMIT {
        return Err(Error::Capacity { what: "MAP subset", n: sub.n(), limit: DENSE_LIMIT });
    }
    let [s, t, l] = cfg.sgld.map_start;
    let opts = MapOptions { max_steps: cfg.sgld.map_max_steps, ..MapOptions::default() };
    let map = map_estimate_with(&sub, priors, HyperParams::new(s, t, l)?, &opts)?;
    let pre = estimate_preconditioner(&sub, priors, &map.theta)?;
    Ok(MapReport {
        subset_rows: sub.n(),
        theta: map.theta,
        psi: map.psi(),
        log_posterior: map.log_posterior,
        grad_norm: map.grad_norm,
        steps: map.steps,
        converged: map.converged,
        preconditioner: mat3_rows(&pre.m),
        hessian: mat3_rows(&pre.hessian),
        repaired: pre.repaired,
    })
}

fn note_map(s: &mut Session, r: &MapReport) {
    if !r.converged {
        s.manifest.warn(format!("MAP search stopped with gradient norm {:.3e}; using the best iterate", r.grad_norm));
    }
    if r.repaired {
        s.manifest.warn("negated Hessian was not positive definite; eigenvalues were clipped");
    }
    s.manifest.count("map_steps", r.steps as u64);
}

pub fn map(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("map", cfg)?;
    let (data, _) = load_configured_dataset(cfg)?;
    let r = compute_map(cfg, &data, &cfg.priors)?;
    note_map(&mut s, &r);
    let p = s.path("map.json");
    write_json(&p, &r)?;
    s.finish()
}

#[derive(Serialize)]
struct ChainSummary {
    chain: usize,
    samples: usize,
    frozen_at: Option<usize>,
    burn_in: usize,
    acceptance_rate: Option<f64>,
    posterior_mean: [f64; 3],
    posterior_std: [f64; 3],
    solver_iterations: u64,
    error: Option<String>,
}

fn moments(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64 } else { 0.0 };
    (m, v.sqrt())
}

fn summarize(c: usize, chain: &SampleChain, error: Option<String>) -> ChainSummary {
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for p in 0..3 {
        (mean[p], std[p]) = moments(&chain.posterior_component(p));
    }
    ChainSummary {
        chain: c,
        samples: chain.len(),
        frozen_at: chain.frozen_at,
        burn_in: chain.burn_in,
        acceptance_rate: chain.acceptance_rate(),
        posterior_mean: mean,
        posterior_std: std,
        solver_iterations: chain.solver_iterations,
        error,
    }
}

/// PSRF over post-burn-in samples truncated to a common length, its progression,
/// and per-chain effective sample sizes.
pub fn chain_diagnostics(chains: &[SampleChain], step: usize) -> Result<Vec<DiagnosticRow>> {
    let mut rows = Vec::new();
    let posts: Vec<Vec<[f64; 3]>> = chains.iter().map(|c| c.posterior().to_vec()).collect();
    let common = posts.iter().map(Vec::len).min().unwrap_or(0);
    if chains.len() >= 2 && common >= 10 {
        let trimmed: Vec<Vec<[f64; 3]>> = posts.iter().map(|p| p[..common].to_vec()).collect();
        let s = psrf_summary(&trimmed, false)?;
        for (p, name) in PARAMS.iter().enumerate() {
            rows.push(DiagnosticRow { iter: common, statistic: format!("psrf_{name}"), value: s.per_parameter[p] });
        }
        rows.push(DiagnosticRow { iter: common, statistic: "psrf_median".into(), value: s.median });
        rows.push(DiagnosticRow { iter: common, statistic: "psrf_p975".into(), value: s.p975 });
        for (t, s) in psrf_progression(&trimmed, step)? {
            rows.push(DiagnosticRow { iter: t, statistic: "psrf_progress_median".into(), value: s.median });
            rows.push(DiagnosticRow { iter: t, statistic: "psrf_progress_p975".into(), value: s.p975 });
            rows.push(DiagnosticRow {
                iter: t,
                statistic: "psrf_progress_max".into(),
                value: s.per_parameter.iter().cloned().fold(f64::MIN, f64::max),
            });
        }
    }
    for (c, chain) in chains.iter().enumerate() {
        if chain.posterior().len() >= 100 {
            for (p, name) in PARAMS.iter().enumerate() {
                let e = effective_sample_size(&chain.posterior_component(p))?;
                rows.push(DiagnosticRow { iter: chain.posterior().len(), statistic: format!("ess_chain{c}_{name}"), value: e.value });
            }
        }
    }
    Ok(rows)
}

fn write_running(path: &Path, chains: &[SampleChain]) -> Result<()> {
    let mut rows = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        for (p, name) in PARAMS.iter().enumerate() {
            let col = chain.posterior_component(p);
            if col.is_empty() {
                continue;
            }
            let r = running_summary(&col)?;
            for (t, (m, sd)) in r.mean.iter().zip(&r.std).enumerate() {
                rows.push(DiagnosticRow { iter: t + 1, statistic: format!("chain{c}_{name}_mean"), value: *m });
                rows.push(DiagnosticRow { iter: t + 1, statistic: format!("chain{c}_{name}_std"), value: *sd });
            }
        }
    }
    write_diagnostics_csv(path, &rows)
}

pub fn sample_sgld(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("sample-sgld", cfg)?;
    let (data, _) = load_configured_dataset(cfg)?;
    if data.n() > LONG_RUN_ROWS && !cfg.run.long_run {
        return Err(Error::Config(vec![format!(
            "n = {} exceeds {LONG_RUN_ROWS}; set run.long_run = true to acknowledge a multi-hour run",
            data.n()
        )]));
    }
    let (center, m) = match cfg.sgld.preconditioner {
        Some(rows) => (HyperParams::new(cfg.sgld.map_start[0], cfg.sgld.map_start[1], cfg.sgld.map_start[2])?.psi(), mat3(rows)),
        None => {
            let r = compute_map(cfg, &data, &cfg.priors)?;
            note_map(&mut s, &r);
            let p = s.path("map.json");
            write_json(&p, &r)?;
            (r.psi, mat3(r.preconditioner))
        }
    };
    let pre = Preconditioner::new(m)?;
    let sgld = cfg.sgld_config(m);
    let root = RngStream::new(cfg.run.seed);
    let init_root = root.substream(u64::MAX);
    for c in 0..cfg.run.chains {
        s.manifest.seed(format!("chain {c}"), cfg.run.seed, format!("root/{c}"));
        s.manifest.seed(format!("chain {c} init"), cfg.run.seed, format!("root/{}/{c}", u64::MAX));
    }
    let results: Vec<(SampleChain, Option<Error>)> = s.pool.install(|| {
        (0..cfg.run.chains)
            .into_par_iter()
            .map(|c| {
                let init = match cfg.sgld.init {
                    InitMode::Map => center,
                    InitMode::MapNormal => dispersed_init(center, &pre, &mut init_root.substream(c as u64)),
                };
                match run_sgld(&data, &cfg.priors, &sgld, init, &root.substream(c as u64)) {
                    Ok(chain) => (chain, None),
                    Err(f) => (f.partial, Some(f.error)),
                }
            })
            .collect()
    });
    finish_chains(s, "chain", results, cfg.sgld.variance_batch.max(100) * 5)
}

fn finish_chains(
    mut s: Session,
    prefix: &str,
    results: Vec<(SampleChain, Option<Error>)>,
    progress_step: usize,
) -> Result<Manifest> {
    let mut summaries = Vec::new();
    let mut first_error = None;
    for (c, (chain, err)) in results.iter().enumerate() {
        let p = s.path(&format!("{prefix}_{c:02}.csv"));
        write_chain_csv(&p, chain)?;
        s.manifest.count("samples", chain.len() as u64);
        s.manifest.count("solver_iterations", chain.solver_iterations);
        if chain.frozen_at.is_none() && prefix == "chain" {
            s.manifest.warn(format!("chain {c} never froze its step size; all samples are flagged as burn-in"));
        }
        if let Some(e) = err {
            s.manifest.warn(format!("chain {c} stopped early: {e}"));
        }
        summaries.push(summarize(c, chain, err.as_ref().map(|e| e.to_string())));
    }
    let chains: Vec<SampleChain> = results.iter().map(|r| r.0.clone()).collect();
    let rows = chain_diagnostics(&chains, progress_step)?;
    let p = s.path("psrf.csv");
    write_diagnostics_csv(&p, &rows)?;
    let p = s.path("summary.json");
    write_json(&p, &summaries)?;
    for (c, (_, err)) in results.into_iter().enumerate() {
        if let Some(e) = err {
            first_error.get_or_insert(e.context(format!("chain {c}")));
        }
    }
    let manifest = s.finish()?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

pub fn sample_mh(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("sample-mh", cfg)?;
    let (data, _) = load_configured_dataset(cfg)?;
    let mh = cfg.mh_config()?;
    let root = RngStream::new(cfg.run.seed).substream(0x3E7);
    for c in 0..cfg.run.chains {
        s.manifest.seed(format!("mh chain {c}"), cfg.run.seed, format!("root/{}/{c}", 0x3E7));
    }
    let results: Vec<(SampleChain, Option<Error>)> = s.pool.install(|| {
        (0..cfg.run.chains)
            .into_par_iter()
            .map(|c| mh_sample(&data, &cfg.priors, &mh, &root.substream(c as u64)))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .map(|c| (c, None))
    .collect();
    for (c, (chain, _)) in results.iter().enumerate() {
        if let Some(rate) = chain.acceptance_rate() {
            if !(0.2..=0.4).contains(&rate) {
                s.manifest.warn(format!("MH chain {c}: acceptance rate {rate:.3} outside [0.2, 0.4]"));
            }
        }
    }
    finish_chains(s, "mh_chain", results, 1_000)
}

/// PSRF, ESS and running summaries for chain files. Chains that never froze
/// use `burn_in` as their burn-in.
pub fn diagnose(cfg: &ExperimentConfig, files: &[PathBuf], burn_in: usize) -> Result<Manifest> {
    let mut s = Session::start("diagnose", cfg)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument("diagnose needs at least one chain file".into()));
    }
    let chains: Vec<SampleChain> = files.iter().map(|f| read_chain_csv(f, burn_in)).collect::<Result<_>>()?;
    let rows = chain_diagnostics(&chains, 500)?;
    let p = s.path("diagnostics.csv");
    write_diagnostics_csv(&p, &rows)?;
    let p = s.path("running_summary.csv");
    write_running(&p, &chains)?;
    s.manifest.count("chains", chains.len() as u64);
    s.finish()
}

/// Posterior predictive at the configured test inputs from one chain file.
pub fn predict(cfg: &ExperimentConfig, chain_file: &Path) -> Result<Manifest> {
    let mut s = Session::start("predict", cfg)?;
    let (data, scaler) = load_configured_dataset(cfg)?;
    let inputs = cfg
        .predict
        .inputs
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["predict.inputs is required for predict".into()]))?;
    let (x, _) = load_inputs(inputs, &scaler)?;
    let chain = read_chain_csv(chain_file, cfg.predict.burn_in)?;
    let post = chain.posterior().len();
    let stride = cfg.predict.stride.unwrap_or_else(|| (post / 100).max(1));
    let result = s.pool.install(|| predict_mc(&chain, &data, &x, stride, false))?;
    let p = s.path("predictions.csv");
    write_predictions_csv(&p, &result, Some(&scaler))?;
    s.manifest.count("posterior_samples_used", result.num_samples as u64);
    s.manifest.count("test_points", x.len() as u64);
    s.finish()
}

pub fn run_condition_sweep(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("condition-sweep", cfg)?;
    let (data, _) = load_configured_dataset(cfg)?;
    s.manifest.seed("prior draws", cfg.run.seed, "root/<draw>");
    let rows = s.pool.install(|| condition_sweep(&data, &cfg.sweep.prior, cfg.sweep.num_draws, cfg.run.seed))?;
    let p = s.path("sweep.csv");
    write_sweep_csv(&p, &rows)?;
    s.manifest.count("draws", rows.len() as u64);
    s.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct GradientCheckRow {
    pub draw_index: usize,
    pub sigma: f64,
    pub tau: f64,
    pub lambda: f64,
    pub kappa: f64,
    /// Early-stop scale; 0 marks the fully converged CG baseline.
    pub q: f64,
    pub repetitions: usize,
    pub mean_log10_rel_error: f64,
    pub mean_iterations: f64,
    pub failures: usize,
}

/// Relative error of stochastic gradients against the exact gradient, averaged
/// over repetitions, for parameter draws from the configured prior.
pub fn gradient_check(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut s = Session::start("gradient-check", cfg)?;
    let (data, _) = load_configured_dataset(cfg)?;
    let gc = &cfg.gradient_check;
    let gamma = Gamma::new(gc.prior.shape, 1.0 / gc.prior.rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let root = RngStream::new(cfg.run.seed);
    s.manifest.seed("parameter draws", cfg.run.seed, "root/<draw>/0");
    s.manifest.seed("gradient repetitions", cfg.run.seed, "root/<draw>/<q index>/<repetition>");
    let mut qs: Vec<f64> = vec![0.0];
    qs.extend(&gc.q_values);
    let rows: Vec<GradientCheckRow> = s.pool.install(|| {
        (0..gc.num_draws)
            .into_par_iter()
            .map(|i| -> Result<Vec<GradientCheckRow>> {
                let draw = root.substream(i as u64);
                let mut r = draw.substream(0);
                let theta = HyperParams::new(gamma.sample(&mut r), gamma.sample(&mut r), gamma.sample(&mut r))?;
                let kappa = condition_number(&theta, &data, ConditionMode::Exact)?;
                let exact = exact_log_gradient(&theta, &data)?;
                let mut out = Vec::new();
                for (k, &q) in qs.iter().enumerate() {
                    // q = 0 stands for plain CG: any threshold at or below ε disables early stopping.
                    let ucfg = cfg.ulisse(if q == 0.0 { cfg.solver.epsilon / (data.n() as f64).sqrt() } else { q });
                    let (mut err_sum, mut it_sum, mut ok, mut failures) = (0.0, 0.0, 0usize, 0usize);
                    for rep in 0..gc.repetitions {
                        let stream = draw.substream(k as u64 + 1).substream(rep as u64);
                        match stochastic_gradient(&theta, &data, gc.num_probes, &ucfg, None, &stream) {
                            Ok(est) => {
                                err_sum += gradient_relative_error(&exact, &est.g_tilde)?.max(f64::MIN_POSITIVE).log10();
                                it_sum += est.solver_iterations as f64;
                                ok += 1;
                            }
                            Err(_) => failures += 1,
                        }
                    }
                    out.push(GradientCheckRow {
                        draw_index: i,
                        sigma: theta.sigma(),
                        tau: theta.tau(),
                        lambda: theta.lambda(),
                        kappa,
                        q,
                        repetitions: ok,
                        mean_log10_rel_error: err_sum / ok as f64,
                        mean_iterations: it_sum / ok as f64,
                        failures,
                    });
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;
    let failed: usize = rows.iter().map(|r| r.failures).sum();
    if failed > 0 {
        s.manifest.warn(format!("{failed} stochastic gradients hit the iteration cap and were excluded"));
    }
    let p = s.path("gradient_check.csv");
    write_rows(&p, &rows)?;
    s.finish()
}
