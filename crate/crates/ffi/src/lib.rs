//! C interface to `ulisse-gp`.
//!
//! Every fallible function returns a [`UgpStatus`]. On failure a description is
//! kept per thread and can be read with [`ugp_last_error`] until the next
//! failing call on that thread. Datasets and chains are opaque handles owned by
//! the caller and released with their `_free` function.
//!
//! Vectors are plain `double` arrays. Inputs are row-major `n × d`. Chain
//! samples are returned row-major `len × 3` in log space `(log σ, log τ, log λ)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ulisse_gp::diagnostics;
use ulisse_gp::gradients::{self, GammaPrior, Priors};
use ulisse_gp::linalg3::Mat3;
use ulisse_gp::predictive;
use ulisse_gp::samplers::{self, MhConfig, SampleChain, SgldConfig};
use ulisse_gp::solvers::{self, CgConfig, ConditionMode};
use ulisse_gp::ulisse::{self, UlisseConfig};
use ulisse_gp::workbench::config::DataFormat;
use ulisse_gp::{Dataset, Error, ErrorCategory, HyperParams, RngStream, Scaler};

/// Result of every fallible call. Values 2 to 9 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Capacity = 4,
    Convergence = 5,
    Divergence = 6,
    Io = 7,
    Parse = 8,
    Config = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

impl From<ErrorCategory> for UgpStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::InvalidArgument => UgpStatus::InvalidArgument,
            ErrorCategory::Numerical => UgpStatus::Numerical,
            ErrorCategory::Capacity => UgpStatus::Capacity,
            ErrorCategory::Convergence => UgpStatus::Convergence,
            ErrorCategory::Divergence => UgpStatus::Divergence,
            ErrorCategory::Io => UgpStatus::Io,
            ErrorCategory::Parse => UgpStatus::Parse,
            ErrorCategory::Config => UgpStatus::Config,
        }
    }
}

/// Covariance parameters in natural units.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgpHyperParams {
    pub sigma: f64,
    pub tau: f64,
    pub lambda: f64,
}

/// Gamma(shape, rate) prior on one parameter.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgpGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgpPriors {
    pub sigma: UgpGammaPrior,
    pub tau: UgpGammaPrior,
    pub lambda: UgpGammaPrior,
}

/// SGLD settings. Fill with [`ugp_sgld_options_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgpSgldOptions {
    pub eps_start: f64,
    pub eps_end: f64,
    pub gamma: f64,
    pub total_iters: usize,
    /// Non-positive or infinite disables freezing.
    pub freeze_threshold: f64,
    pub variance_batch: usize,
    pub probe_redraw_period: usize,
    pub num_probes: usize,
    /// Row-major 3×3 preconditioner.
    pub preconditioner: [f64; 9],
    pub q: f64,
    pub beta: f64,
    /// Residual threshold of the inner solves.
    pub epsilon: f64,
    pub warm_start: bool,
}

/// A standardized (or raw) regression dataset.
pub struct UgpDataset {
    data: Dataset,
    scaler: Option<Scaler>,
}

/// A sampled chain in log space.
pub struct UgpChain {
    chain: SampleChain,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UgpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            UgpStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            e.category().into()
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            UgpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
}

fn theta(t: &UgpHyperParams) -> Result<HyperParams, Failure> {
    Ok(HyperParams::new(t.sigma, t.tau, t.lambda)?)
}

fn priors(p: &UgpPriors) -> Result<Priors, Failure> {
    let g = |q: UgpGammaPrior| GammaPrior::new(q.shape, q.rate);
    Ok(Priors { sigma: g(p.sigma)?, tau: g(p.tau)?, lambda: g(p.lambda)? })
}

fn out_params(t: &HyperParams) -> UgpHyperParams {
    UgpHyperParams { sigma: t.sigma(), tau: t.tau(), lambda: t.lambda() }
}

/// Message of the last failure on this thread, or NULL. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ugp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ugp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from `x` (`n × d`, row-major) and labels `y` (`n`). With
/// `standardize`, inputs are scaled per column and labels centred and scaled.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    standardize: bool,
    out: *mut *mut UgpDataset,
) -> UgpStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or(Failure::Core(Error::InvalidArgument("n * d overflows".into())))?;
        let x = slice(x, len, "x")?.to_vec();
        let y = slice(y, n, "y")?.to_vec();
        let handle = if standardize {
            let (data, scaler) = Dataset::standardized(x, y, d)?;
            UgpDataset { data, scaler: Some(scaler) }
        } else {
            UgpDataset { data: Dataset::new(x, y, d)?, scaler: None }
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Reads a CSV file (label in the last column, optional header) and
/// standardizes it.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_load_csv(path: *const c_char, out: *mut *mut UgpDataset) -> UgpStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        let (data, scaler) = ulisse_gp::workbench::load_dataset(Path::new(path), DataFormat::Csv, None)?;
        write(out, Box::into_raw(Box::new(UgpDataset { data, scaler: Some(scaler) })), "out")
    })
}

/// Number of points, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_n(ds: *const UgpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.n())
}

/// Input dimension, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_d(ds: *const UgpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.d())
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_free(ds: *mut UgpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// `out = K(θ) v`; `v` and `out` hold `n` doubles.
///
/// # Safety
/// Pointers must be valid for the lengths above; `theta` must be readable.
#[no_mangle]
pub unsafe extern "C" fn ugp_cmvp(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    v: *const f64,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let n = ds.data.n();
        let v = slice(v, n, "v")?;
        let kv = ulisse_gp::kernel::cmvp(&t, &ds.data, v, ulisse_gp::Precision::Double)?;
        slice_mut(out, n, "out")?.copy_from_slice(&kv);
        Ok(())
    })
}

/// Solves `K(θ) x = b` by conjugate gradients to residual norm `epsilon`.
/// Returns `UGP_STATUS_CONVERGENCE` if the iteration cap (`10 n`) is hit; `x`
/// then holds the last iterate.
///
/// # Safety
/// `b` and `x` must hold `n` doubles; `iterations` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ugp_cg_solve(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    b: *const f64,
    epsilon: f64,
    x: *mut f64,
    iterations: *mut usize,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let n = ds.data.n();
        let b = slice(b, n, "b")?;
        let report = solvers::cg_solve(&t, &ds.data, b, &CgConfig::with_epsilon(epsilon))?;
        slice_mut(x, n, "x")?.copy_from_slice(&report.solution);
        if !iterations.is_null() {
            iterations.write(report.iterations);
        }
        if !report.converged {
            return Err(Error::NotConverged {
                context: "CG".into(),
                iterations: report.iterations,
                residual: report.final_residual_norm,
            }
            .into());
        }
        Ok(())
    })
}

/// One unbiased estimate of `K(θ)⁻¹ b` with early-stop scale `q` and roulette
/// rate `beta`, driven by `seed`.
///
/// # Safety
/// `b` and `x` must hold `n` doubles; `iterations` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ugp_ulisse_solve(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    b: *const f64,
    q: f64,
    beta: f64,
    epsilon: f64,
    seed: u64,
    x: *mut f64,
    iterations: *mut usize,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let n = ds.data.n();
        let b = slice(b, n, "b")?;
        let cfg = UlisseConfig { q, beta, base: CgConfig::with_epsilon(epsilon), num_replicas: 1 };
        let sol = ulisse::ulisse_solve(&t, &ds.data, b, &cfg, &RngStream::new(seed))?;
        slice_mut(x, n, "x")?.copy_from_slice(&sol.estimates[0]);
        if !iterations.is_null() {
            iterations.write(sol.report.iterations);
        }
        Ok(())
    })
}

/// Exact log-marginal likelihood by dense Cholesky (capacity-guarded).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_log_marginal_likelihood(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        write(out, gradients::log_marginal_likelihood(&t, &ds.data)?, "out")
    })
}

/// Exact gradient of the log-marginal likelihood with respect to
/// `(log σ, log τ, log λ)`.
///
/// # Safety
/// `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ugp_exact_log_gradient(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let g = gradients::exact_log_gradient(&t, &ds.data)?;
        slice_mut(out, 3, "out")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Unbiased stochastic estimate of the log-space gradient with `num_probes`
/// Rademacher probes and early-stopped solves.
///
/// # Safety
/// `out` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ugp_stochastic_log_gradient(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    num_probes: usize,
    q: f64,
    beta: f64,
    seed: u64,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let cfg = UlisseConfig { q, beta, ..UlisseConfig::default() };
        let est = gradients::stochastic_gradient(&t, &ds.data, num_probes, &cfg, None, &RngStream::new(seed))?;
        slice_mut(out, 3, "out")?.copy_from_slice(&est.g_tilde);
        Ok(())
    })
}

/// Condition number of `K(θ)`: dense eigenvalues when `exact`, otherwise a
/// 100-step Lanczos estimate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_condition_number(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    exact: bool,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let mode = if exact { ConditionMode::Exact } else { ConditionMode::ESTIMATE };
        write(out, solvers::condition_number(&t, &ds.data, mode)?, "out")
    })
}

/// Predictive mean and variance at `m` test inputs (`m × d`, row-major, in the
/// same units as the stored inputs). Outputs are in the stored label units.
///
/// # Safety
/// `x_star` must hold `m * d` doubles, `mean` and `variance` `m` doubles each.
#[no_mangle]
pub unsafe extern "C" fn ugp_predict(
    ds: *const UgpDataset,
    params: *const UgpHyperParams,
    x_star: *const f64,
    m: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let t = theta(reference(params, "params")?)?;
        let d = ds.data.d();
        let xs = slice(x_star, m * d, "x_star")?;
        let points: Vec<Vec<f64>> = xs.chunks(d).map(<[f64]>::to_vec).collect();
        let res = predictive::predict_points(&t, &ds.data, &points)?;
        let mean = slice_mut(mean, m, "mean")?;
        let variance = slice_mut(variance, m, "variance")?;
        for (j, (mu, v)) in res.into_iter().enumerate() {
            mean[j] = mu;
            variance[j] = v;
        }
        Ok(())
    })
}

/// Converts standardized predictive moments back to original label units.
/// Fails with `UGP_STATUS_INVALID_ARGUMENT` for unstandardized datasets.
///
/// # Safety
/// `mean` and `variance` must hold `m` doubles each; they are updated in place.
#[no_mangle]
pub unsafe extern "C" fn ugp_dataset_unscale(
    ds: *const UgpDataset,
    mean: *mut f64,
    variance: *mut f64,
    m: usize,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let s = ds
            .scaler
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset was not standardized".into()))?;
        for v in slice_mut(mean, m, "mean")? {
            *v = s.label_mean(*v);
        }
        for v in slice_mut(variance, m, "variance")? {
            *v = s.label_variance(*v);
        }
        Ok(())
    })
}

/// Maximum a posteriori parameters from `init` by gradient ascent in log space.
///
/// # Safety
/// `out` must be writable; `converged` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ugp_map_estimate(
    ds: *const UgpDataset,
    prior: *const UgpPriors,
    init: *const UgpHyperParams,
    max_steps: usize,
    out: *mut UgpHyperParams,
    converged: *mut bool,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let p = priors(reference(prior, "priors")?)?;
        let init = theta(reference(init, "init")?)?;
        let map = samplers::map_estimate(&ds.data, &p, init, max_steps)?;
        if !converged.is_null() {
            converged.write(map.converged);
        }
        write(out, out_params(&map.theta), "out")
    })
}

/// Defaults: ε from 0.1 to 1e-4 over 40000 iterations, γ = 1, freeze threshold
/// 0.002 checked every 100 iterations, 4 probes redrawn every 20 iterations,
/// identity preconditioner, q = 0.01, β = 1, inner residual 1e-8, warm starts on.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_sgld_options_default(out: *mut UgpSgldOptions) -> UgpStatus {
    guard(|| {
        let c = SgldConfig::default();
        let mut m = [0.0; 9];
        for r in 0..3 {
            for k in 0..3 {
                m[3 * r + k] = c.preconditioner[(r, k)];
            }
        }
        let opts = UgpSgldOptions {
            eps_start: c.eps_start,
            eps_end: c.eps_end,
            gamma: c.gamma,
            total_iters: c.total_iters,
            freeze_threshold: c.freeze_threshold.unwrap_or(f64::INFINITY),
            variance_batch: c.variance_batch,
            probe_redraw_period: c.probe_redraw_period,
            num_probes: c.num_probes,
            preconditioner: m,
            q: c.solver.q,
            beta: c.solver.beta,
            epsilon: c.solver.base.epsilon,
            warm_start: c.warm_start,
        };
        write(out, opts, "out")
    })
}

fn sgld_config(o: &UgpSgldOptions) -> SgldConfig {
    let freeze = (o.freeze_threshold > 0.0 && o.freeze_threshold.is_finite()).then_some(o.freeze_threshold);
    SgldConfig {
        eps_start: o.eps_start,
        eps_end: o.eps_end,
        gamma: o.gamma,
        total_iters: o.total_iters,
        freeze_threshold: freeze,
        variance_batch: o.variance_batch,
        probe_redraw_period: o.probe_redraw_period,
        num_probes: o.num_probes,
        preconditioner: Mat3::from_row_slice(&o.preconditioner),
        solver: UlisseConfig { q: o.q, beta: o.beta, base: CgConfig::with_epsilon(o.epsilon), num_replicas: 1 },
        warm_start: o.warm_start,
        ..SgldConfig::default()
    }
}

/// Runs one preconditioned SGLD chain from log-space `init_psi`. If the chain
/// diverges, the samples produced so far are still returned through `out` and
/// the status reports the failure.
///
/// # Safety
/// `init_psi` must hold 3 doubles; `out` must be writable. A non-NULL `*out`
/// must be released with [`ugp_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn ugp_sgld_run(
    ds: *const UgpDataset,
    prior: *const UgpPriors,
    options: *const UgpSgldOptions,
    init_psi: *const f64,
    seed: u64,
    out: *mut *mut UgpChain,
) -> UgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        out.write(std::ptr::null_mut());
        let ds = reference(ds, "dataset")?;
        let p = priors(reference(prior, "priors")?)?;
        let cfg = sgld_config(reference(options, "options")?);
        let init = slice(init_psi, 3, "init_psi")?;
        let init = [init[0], init[1], init[2]];
        let (chain, err) = match samplers::run_sgld(&ds.data, &p, &cfg, init, &RngStream::new(seed)) {
            Ok(c) => (c, None),
            Err(f) => (f.partial, Some(f.error)),
        };
        out.write(Box::into_raw(Box::new(UgpChain { chain })));
        match err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// Runs one adaptive random-walk Metropolis–Hastings chain on the exact
/// posterior (dense, capacity-guarded). The first `burn_in` samples are marked
/// as burn-in.
///
/// # Safety
/// `out` must be writable; release the chain with [`ugp_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn ugp_mh_run(
    ds: *const UgpDataset,
    prior: *const UgpPriors,
    init: *const UgpHyperParams,
    num_iters: usize,
    burn_in: usize,
    proposal_scale: f64,
    seed: u64,
    out: *mut *mut UgpChain,
) -> UgpStatus {
    guard(|| {
        let ds = reference(ds, "dataset")?;
        let p = priors(reference(prior, "priors")?)?;
        let cfg = MhConfig {
            num_iters,
            burn_in,
            proposal_scale,
            adapt_iters: burn_in,
            init: theta(reference(init, "init")?)?,
            ..MhConfig::default()
        };
        let chain = samplers::mh_sample(&ds.data, &p, &cfg, &RngStream::new(seed))?;
        write(out, Box::into_raw(Box::new(UgpChain { chain })), "out")
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `chain` must be NULL or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn ugp_chain_len(chain: *const UgpChain) -> usize {
    chain.as_ref().map_or(0, |c| c.chain.len())
}

/// Index of the first post-burn-in sample.
///
/// # Safety
/// `chain` must be NULL or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn ugp_chain_burn_in(chain: *const UgpChain) -> usize {
    chain.as_ref().map_or(0, |c| c.chain.burn_in)
}

/// Iteration at which the step size froze, or -1 if it never did.
///
/// # Safety
/// `chain` must be NULL or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn ugp_chain_frozen_at(chain: *const UgpChain) -> i64 {
    chain.as_ref().and_then(|c| c.chain.frozen_at).map_or(-1, |f| f as i64)
}

/// Copies all samples (`len × 3`, log space) into `out`, which must hold at
/// least `capacity` doubles.
///
/// # Safety
/// `out` must be valid for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ugp_chain_samples(chain: *const UgpChain, out: *mut f64, capacity: usize) -> UgpStatus {
    guard(|| {
        let c = &reference(chain, "chain")?.chain;
        let need = 3 * c.len();
        if capacity < need {
            return Err(Error::InvalidArgument(format!("buffer holds {capacity} doubles, need {need}")).into());
        }
        let out = slice_mut(out, need, "out")?;
        for (dst, s) in out.chunks_exact_mut(3).zip(&c.samples) {
            dst.copy_from_slice(s);
        }
        Ok(())
    })
}

/// # Safety
/// `chain` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ugp_chain_free(chain: *mut UgpChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Potential scale reduction factor of one scalar quantity over `num_chains`
/// chains of length `len`, stored one chain after another. `split` halves each
/// chain first. An infinite value means zero within-chain variance.
///
/// # Safety
/// `samples` must hold `num_chains * len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_psrf(
    samples: *const f64,
    num_chains: usize,
    len: usize,
    split: bool,
    out: *mut f64,
) -> UgpStatus {
    guard(|| {
        let all = slice(samples, num_chains * len, "samples")?;
        let chains: Vec<Vec<f64>> = all.chunks(len.max(1)).map(<[f64]>::to_vec).collect();
        let r = diagnostics::psrf(&chains, split)?;
        write(out, r.value, "out")
    })
}

/// Effective sample size of one chain of length `len`.
///
/// # Safety
/// `samples` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugp_effective_sample_size(samples: *const f64, len: usize, out: *mut f64) -> UgpStatus {
    guard(|| {
        let s = slice(samples, len, "samples")?;
        write(out, diagnostics::effective_sample_size(s)?.value, "out")
    })
}
