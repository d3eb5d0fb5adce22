//! Squared-exponential covariance with additive noise and matrix-free products.
//!
//! The covariance is `k(xi, xj) = σ·exp(−τ‖xi − xj‖²) + λ·[i = j]`. Products with
//! `K` and with its parameter derivatives are computed row-block by row-block,
//! recomputing entries on the fly, so memory stays `O(n)` per input vector.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// Standardized inputs `x` (row-major, `n × d`) and labels `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    /// `x` column-major, so distance sweeps over `j` read contiguously.
    xt: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

fn transpose(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut xt = vec![0.0; n * d];
    for i in 0..n {
        for c in 0..d {
            xt[c * n + i] = x[i * d + c];
        }
    }
    xt
}

/// Affine maps used to standardize a dataset, kept for de-standardizing predictions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Scaler {
    pub fn standardize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn label_mean(&self, standardized_mean: f64) -> f64 {
        self.y_mean + self.y_std * standardized_mean
    }

    pub fn label_variance(&self, standardized_variance: f64) -> f64 {
        self.y_std * self.y_std * standardized_variance
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / count as f64;
    if count < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (count - 1) as f64).sqrt())
}

impl Dataset {
    /// Wraps already-prepared data without rescaling.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset must contain at least one row".into()));
        }
        check_len("x entries (n*d)", n * d, x.len())?;
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self { xt: transpose(&x, n, d), x, y, n, d })
    }

    /// Centres every column of `x` and `y` and scales it to unit sample standard
    /// deviation. Constant columns become all-zero.
    pub fn standardized(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<(Self, Scaler)> {
        let raw = Self::new(x, y, d)?;
        let n = raw.n;
        let mut x_mean = Vec::with_capacity(d);
        let mut x_std = Vec::with_capacity(d);
        for c in 0..d {
            let (m, s) = mean_std((0..n).map(|i| raw.x[i * d + c]), n);
            x_mean.push(m);
            x_std.push(s);
        }
        let (y_mean, y_std) = mean_std(raw.y.iter().copied(), n);
        let mut x = raw.x;
        for i in 0..n {
            for c in 0..d {
                let v = &mut x[i * d + c];
                *v = if x_std[c] > 0.0 { (*v - x_mean[c]) / x_std[c] } else { 0.0 };
            }
        }
        let y = raw
            .y
            .iter()
            .map(|v| if y_std > 0.0 { (v - y_mean) / y_std } else { 0.0 })
            .collect();
        let scaler = Scaler { x_mean, x_std, y_mean, y_std };
        Ok((Self { xt: transpose(&x, n, d), x, y, n, d }, scaler))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("row index {i} out of range")));
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self::new(x, y, self.d)
    }

    /// First `m` rows.
    pub fn head(&self, m: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..m.min(self.n)).collect();
        self.subset(&idx)
    }
}

/// Covariance parameters `θ = (σ, τ, λ)`.
///
/// Zero is accepted for each component so that degenerate covariances such as
/// `K = λI` can be formed; samplers only ever construct strictly positive values
/// through [`HyperParams::from_log`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperParams {
    sigma: f64,
    tau: f64,
    lambda: f64,
}

impl HyperParams {
    pub fn new(sigma: f64, tau: f64, lambda: f64) -> Result<Self> {
        let p = Self { sigma, tau, lambda };
        for (name, v) in [("sigma", sigma), ("tau", tau), ("lambda", lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(p)
    }

    /// From log-space coordinates `ψ = (log σ, log τ, log λ)`.
    pub fn from_log(psi: [f64; 3]) -> Result<Self> {
        if !psi.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite log parameters {psi:?}")));
        }
        let p = Self::new(psi[0].exp(), psi[1].exp(), psi[2].exp())?;
        if !p.is_strictly_positive() {
            return Err(Error::InvalidArgument(format!("log parameters {psi:?} underflow")));
        }
        Ok(p)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn natural(&self) -> [f64; 3] {
        [self.sigma, self.tau, self.lambda]
    }

    /// `ψ = log θ`; components that are zero map to `-inf`.
    pub fn psi(&self) -> [f64; 3] {
        [self.sigma.ln(), self.tau.ln(), self.lambda.ln()]
    }

    pub fn get(&self, sel: DerivativeSelector) -> f64 {
        self.natural()[sel.index()]
    }

    pub fn with(&self, sel: DerivativeSelector, value: f64) -> Result<Self> {
        let mut t = self.natural();
        t[sel.index()] = value;
        Self::new(t[0], t[1], t[2])
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.sigma > 0.0 && self.tau > 0.0 && self.lambda > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DerivativeSelector {
    Sigma,
    Tau,
    Lambda,
}

impl DerivativeSelector {
    pub const ALL: [DerivativeSelector; 3] = [Self::Sigma, Self::Tau, Self::Lambda];

    pub fn index(self) -> usize {
        match self {
            Self::Sigma => 0,
            Self::Tau => 1,
            Self::Lambda => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

/// Execution knobs for matrix-free products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmvpOptions {
    /// Rows per parallel work item.
    pub block_size: usize,
    pub precision: Precision,
    /// Forces a fixed reduction order in every inner product so runs are
    /// bit-reproducible. Products with `K` are row-ordered either way.
    pub deterministic: bool,
}

impl Default for CmvpOptions {
    fn default() -> Self {
        Self {
            block_size: 256,
            precision: Precision::Double,
            deterministic: false,
        }
    }
}

/// Which matrices a fused pass should apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProductKinds {
    pub covariance: bool,
    pub d_sigma: bool,
    pub d_tau: bool,
}

impl ProductKinds {
    pub const COVARIANCE: Self = Self { covariance: true, d_sigma: false, d_tau: false };
    pub const DERIVATIVES: Self = Self { covariance: false, d_sigma: true, d_tau: true };
    pub const ALL: Self = Self { covariance: true, d_sigma: true, d_tau: true };

    fn count(self) -> usize {
        self.covariance as usize + self.d_sigma as usize + self.d_tau as usize
    }
}

/// Outputs of [`fused_products`]; each field holds one vector per input, or is
/// empty when that product was not requested.
#[derive(Clone, Debug, Default)]
pub struct KernelProducts {
    pub covariance: Vec<Vec<f64>>,
    pub d_sigma: Vec<Vec<f64>>,
    pub d_tau: Vec<Vec<f64>>,
}

pub fn kernel_entry(theta: &HyperParams, xi: &[f64], xj: &[f64], same_index: bool) -> Result<f64> {
    check_len("xj", xi.len(), xj.len())?;
    if !xi.iter().chain(xj).all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input vector".into()));
    }
    let r2 = sq_dist(xi, xj);
    let noise = if same_index { theta.lambda } else { 0.0 };
    Ok(theta.sigma * (-theta.tau * r2).exp() + noise)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[inline]
fn sq_dist_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `K v`.
pub fn cmvp(theta: &HyperParams, data: &Dataset, v: &[f64], precision: Precision) -> Result<Vec<f64>> {
    let opts = CmvpOptions { precision, ..CmvpOptions::default() };
    cmvp_with(theta, data, v, &opts)
}

pub fn cmvp_with(theta: &HyperParams, data: &Dataset, v: &[f64], opts: &CmvpOptions) -> Result<Vec<f64>> {
    let mut out = fused_products(theta, data, &[v], ProductKinds::COVARIANCE, opts)?;
    Ok(out.covariance.pop().expect("one input"))
}

/// `(∂K/∂θ_sel) v` in natural parameter space.
pub fn cmvp_derivative(
    theta: &HyperParams,
    data: &Dataset,
    sel: DerivativeSelector,
    v: &[f64],
) -> Result<Vec<f64>> {
    cmvp_derivative_with(theta, data, sel, v, &CmvpOptions::default())
}

pub fn cmvp_derivative_with(
    theta: &HyperParams,
    data: &Dataset,
    sel: DerivativeSelector,
    v: &[f64],
    opts: &CmvpOptions,
) -> Result<Vec<f64>> {
    check_len("v", data.n, v.len())?;
    match sel {
        DerivativeSelector::Lambda => Ok(v.to_vec()),
        DerivativeSelector::Sigma => {
            let kinds = ProductKinds { covariance: false, d_sigma: true, d_tau: false };
            Ok(fused_products(theta, data, &[v], kinds, opts)?.d_sigma.pop().expect("one input"))
        }
        DerivativeSelector::Tau => {
            let kinds = ProductKinds { covariance: false, d_sigma: false, d_tau: true };
            Ok(fused_products(theta, data, &[v], kinds, opts)?.d_tau.pop().expect("one input"))
        }
    }
}

/// `(∂K/∂ψ_sel) v` with `ψ = log θ`, i.e. `θ_sel` times the natural-space product.
pub fn cmvp_log_derivative(
    theta: &HyperParams,
    data: &Dataset,
    sel: DerivativeSelector,
    v: &[f64],
) -> Result<Vec<f64>> {
    let scale = theta.get(sel);
    let mut out = cmvp_derivative(theta, data, sel, v)?;
    out.iter_mut().for_each(|o| *o *= scale);
    Ok(out)
}

/// Applies any combination of `K`, `∂K/∂σ` and `∂K/∂τ` to several vectors in a
/// single sweep over the kernel entries, so each `exp` is evaluated once per pair.
pub fn fused_products(
    theta: &HyperParams,
    data: &Dataset,
    inputs: &[&[f64]],
    kinds: ProductKinds,
    opts: &CmvpOptions,
) -> Result<KernelProducts> {
    let n = data.n;
    for v in inputs {
        check_len("v", n, v.len())?;
    }
    let m = inputs.len();
    let width = m * kinds.count();
    if m == 0 || width == 0 {
        return Ok(KernelProducts::default());
    }
    if opts.block_size == 0 {
        return Err(Error::InvalidArgument("block_size must be positive".into()));
    }
    let mut out = vec![0.0; n * width];
    let chunk = opts.block_size * width;
    match opts.precision {
        Precision::Double => out.par_chunks_mut(chunk).enumerate().for_each(|(b, block)| {
            row_block_f64_dispatch(theta, data, inputs, kinds, b * opts.block_size, block)
        }),
        Precision::Single => {
            // Interleave inputs so that the inner loop over vectors reads contiguously.
            let mut packed = vec![0.0f32; n * m];
            for (k, v) in inputs.iter().enumerate() {
                for j in 0..n {
                    packed[j * m + k] = v[j] as f32;
                }
            }
            let x32: Vec<f32> = data.x.iter().map(|&v| v as f32).collect();
            out.par_chunks_mut(chunk).enumerate().for_each(|(b, block)| {
                row_block_f32(theta, &x32, data.d, &packed, m, kinds, b * opts.block_size, block)
            })
        }
    }
    let mut result = KernelProducts::default();
    let mut slot = 0;
    for (wanted, target) in [
        (kinds.covariance, &mut result.covariance),
        (kinds.d_sigma, &mut result.d_sigma),
        (kinds.d_tau, &mut result.d_tau),
    ] {
        if !wanted {
            continue;
        }
        for k in 0..m {
            target.push((0..n).map(|i| out[i * width + slot * m + k]).collect());
        }
        slot += 1;
    }
    Ok(result)
}

/// `exp(x)` for `x <= 0`, written so the row loop vectorizes. Relative error is
/// a few ulp; results below `exp(-708)` flush to zero.
#[inline(always)]
fn exp_neg(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let xc = x.max(-708.0);
    let t = xc * LOG2E + SHIFT;
    let k = t - SHIFT;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12; |r| <= ln2 / 2.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // The low mantissa bits of `t` hold k; shift them into the exponent field.
    let scale = f64::from_bits((t.to_bits().wrapping_add(1023)) << 52);
    if x < -708.0 {
        0.0
    } else {
        p * scale
    }
}

/// Sum of products with four interleaved accumulators; the order is fixed, so
/// results do not depend on threading.
#[inline(always)]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut s = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Picks a wider-vector build of the row kernel when the CPU supports one. The
/// arithmetic and its order are the same in every build (no FMA contraction),
/// so results are bit-identical either way.
fn row_block_f64_dispatch(
    theta: &HyperParams,
    data: &Dataset,
    inputs: &[&[f64]],
    kinds: ProductKinds,
    first_row: usize,
    block: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        // SAFETY: each build runs only after its feature was detected.
        if std::arch::is_x86_feature_detected!("avx512f") {
            return unsafe { row_block_f64_avx512(theta, data, inputs, kinds, first_row, block) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            return unsafe { row_block_f64_avx2(theta, data, inputs, kinds, first_row, block) };
        }
    }
    row_block_f64(theta, data, inputs, kinds, first_row, block)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn row_block_f64_avx512(
    theta: &HyperParams,
    data: &Dataset,
    inputs: &[&[f64]],
    kinds: ProductKinds,
    first_row: usize,
    block: &mut [f64],
) {
    row_block_f64(theta, data, inputs, kinds, first_row, block)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_block_f64_avx2(
    theta: &HyperParams,
    data: &Dataset,
    inputs: &[&[f64]],
    kinds: ProductKinds,
    first_row: usize,
    block: &mut [f64],
) {
    row_block_f64(theta, data, inputs, kinds, first_row, block)
}

#[inline(always)]
fn row_block_f64(
    theta: &HyperParams,
    data: &Dataset,
    inputs: &[&[f64]],
    kinds: ProductKinds,
    first_row: usize,
    block: &mut [f64],
) {
    let (sigma, tau, lambda) = (theta.sigma, theta.tau, theta.lambda);
    let width = inputs.len() * kinds.count();
    let (n, d) = (data.n, data.d);
    let mut r2 = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut w = vec![0.0; n];
    for (local, row_out) in block.chunks_mut(width).enumerate() {
        let i = first_row + local;
        r2.iter_mut().for_each(|r| *r = 0.0);
        for c in 0..d {
            let xic = data.x[i * d + c];
            for (r, xj) in r2.iter_mut().zip(&data.xt[c * n..(c + 1) * n]) {
                let t = xic - xj;
                *r += t * t;
            }
        }
        for (ej, r) in e.iter_mut().zip(&r2) {
            *ej = exp_neg(-tau * r);
        }
        let mut slot = 0;
        if kinds.covariance {
            for (wj, ej) in w.iter_mut().zip(&e) {
                *wj = sigma * ej;
            }
            w[i] += lambda;
            for v in inputs {
                row_out[slot] = dot4(&w, v);
                slot += 1;
            }
        }
        if kinds.d_sigma {
            for v in inputs {
                row_out[slot] = dot4(&e, v);
                slot += 1;
            }
        }
        if kinds.d_tau {
            for ((wj, ej), r) in w.iter_mut().zip(&e).zip(&r2) {
                *wj = -sigma * r * ej;
            }
            for v in inputs {
                row_out[slot] = dot4(&w, v);
                slot += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn row_block_f32(
    theta: &HyperParams,
    x: &[f32],
    d: usize,
    packed: &[f32],
    m: usize,
    kinds: ProductKinds,
    first_row: usize,
    block: &mut [f64],
) {
    let (sigma, tau, lambda) = (theta.sigma as f32, theta.tau as f32, theta.lambda as f32);
    let width = m * kinds.count();
    let n = x.len() / d;
    let mut acc = vec![0.0f32; width];
    for (local, row_out) in block.chunks_mut(width).enumerate() {
        let i = first_row + local;
        let xi = &x[i * d..(i + 1) * d];
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..n {
            let r2 = sq_dist_f32(xi, &x[j * d..(j + 1) * d]);
            let e = (-tau * r2).exp();
            let vj = &packed[j * m..(j + 1) * m];
            let mut slot = 0;
            if kinds.covariance {
                let kij = sigma * e + if i == j { lambda } else { 0.0 };
                for (a, v) in acc[..m].iter_mut().zip(vj) {
                    *a += kij * v;
                }
                slot += m;
            }
            if kinds.d_sigma {
                for (a, v) in acc[slot..slot + m].iter_mut().zip(vj) {
                    *a += e * v;
                }
                slot += m;
            }
            if kinds.d_tau {
                let g = -sigma * r2 * e;
                for (a, v) in acc[slot..slot + m].iter_mut().zip(vj) {
                    *a += g * v;
                }
            }
        }
        for (o, a) in row_out.iter_mut().zip(&acc) {
            *o = *a as f64;
        }
    }
}

/// Dense `K`; only for small `n` (oracles, exact likelihood, spectra).
pub fn dense_covariance(theta: &HyperParams, data: &Dataset) -> DMatrix<f64> {
    let n = data.n;
    DMatrix::from_fn(n, n, |i, j| {
        let e = theta.sigma * (-theta.tau * sq_dist(data.row(i), data.row(j))).exp();
        if i == j {
            e + theta.lambda
        } else {
            e
        }
    })
}

/// Dense `∂K/∂θ_sel`.
pub fn dense_derivative(theta: &HyperParams, data: &Dataset, sel: DerivativeSelector) -> DMatrix<f64> {
    let n = data.n;
    match sel {
        DerivativeSelector::Lambda => DMatrix::identity(n, n),
        DerivativeSelector::Sigma => DMatrix::from_fn(n, n, |i, j| {
            (-theta.tau * sq_dist(data.row(i), data.row(j))).exp()
        }),
        DerivativeSelector::Tau => DMatrix::from_fn(n, n, |i, j| {
            let r2 = sq_dist(data.row(i), data.row(j));
            -theta.sigma * r2 * (-theta.tau * r2).exp()
        }),
    }
}

/// Inner product, optionally with a parallel (non-reproducible order) reduction.
pub(crate) fn dot(a: &[f64], b: &[f64], deterministic: bool) -> f64 {
    const PAR_MIN: usize = 1 << 14;
    if deterministic || a.len() < PAR_MIN {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    } else {
        a.par_iter().zip(b.par_iter()).map(|(x, y)| x * y).sum()
    }
}
