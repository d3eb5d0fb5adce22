//! Convergence and mixing diagnostics for sample chains.

use crate::error::{Error, Result};
use crate::linalg3::{is_spd, max_eigenvalue, sqrtm_psd, symmetrize, Mat3};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psrf {
    pub value: f64,
    /// Set when the within-chain variance is zero; `value` is then `+inf`.
    pub degenerate: bool,
}

/// Gelman–Rubin potential scale reduction factor for one scalar quantity.
///
/// With `n` draws per chain, `W` the mean within-chain variance and `B` the
/// between-chain variance of the means times `n`, returns
/// `sqrt(((n − 1)/n · W + B/n) / W)`, floored at 1. With `split` each chain is
/// halved first.
pub fn psrf(chains: &[Vec<f64>], split: bool) -> Result<Psrf> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("PSRF needs at least two chains".into()));
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 10 {
        return Err(Error::InvalidArgument(format!("PSRF needs chains of length >= 10, shortest is {len}")));
    }
    let pieces: Vec<&[f64]> = if split {
        let half = len / 2;
        chains
            .iter()
            .flat_map(|c| [&c[..half], &c[len - half..len]])
            .collect()
    } else {
        chains.iter().map(|c| &c[..len]).collect()
    };
    Ok(gelman_rubin(&pieces))
}

fn gelman_rubin(pieces: &[&[f64]]) -> Psrf {
    let n = pieces[0].len() as f64;
    let means: Vec<f64> = pieces.iter().map(|c| mean(c)).collect();
    let w = pieces.iter().map(|c| variance(c)).sum::<f64>() / pieces.len() as f64;
    let b = n * variance(&means);
    if !(w > 0.0) {
        return Psrf { value: f64::INFINITY, degenerate: true };
    }
    let v_hat = (n - 1.0) / n * w + b / n;
    Psrf { value: (v_hat / w).sqrt().max(1.0), degenerate: false }
}

/// PSRF for each of three parameters plus the across-parameter median and
/// 97.5th percentile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsrfSummary {
    pub per_parameter: [f64; 3],
    pub median: f64,
    pub p975: f64,
    pub degenerate: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || sorted[hi] == sorted[lo] {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn psrf_summary(chains: &[Vec<[f64; 3]>], split: bool) -> Result<PsrfSummary> {
    let mut per = [0.0; 3];
    let mut degenerate = false;
    for (p, out) in per.iter_mut().enumerate() {
        let column: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|s| s[p]).collect()).collect();
        let r = psrf(&column, split)?;
        degenerate |= r.degenerate;
        *out = r.value;
    }
    let mut sorted = per;
    sorted.sort_by(f64::total_cmp);
    Ok(PsrfSummary {
        per_parameter: per,
        median: percentile(&sorted, 0.5),
        p975: percentile(&sorted, 0.975),
        degenerate,
    })
}

/// PSRF on growing prefixes `[0, t)` for `t = step, 2·step, ...`.
pub fn psrf_progression(chains: &[Vec<[f64; 3]>], step: usize) -> Result<Vec<(usize, PsrfSummary)>> {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    let step = step.max(10);
    let mut out = Vec::new();
    let mut t = step;
    while t <= len {
        let prefixes: Vec<Vec<[f64; 3]>> = chains.iter().map(|c| c[..t].to_vec()).collect();
        out.push((t, psrf_summary(&prefixes, false)?));
        t += step;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// Set for constant chains, where autocorrelation is undefined.
    pub degenerate: bool,
}

/// Effective sample size `N / (1 + 2 Σ ρ_k)` using Geyer's initial monotone
/// sequence: lag pairs `ρ_{2m} + ρ_{2m+1}` are summed until the first negative
/// pair, each clipped to the previous pair.
pub fn effective_sample_size(chain: &[f64]) -> Result<Ess> {
    let n = chain.len();
    if n < 100 {
        return Err(Error::InvalidArgument(format!("ESS needs at least 100 draws, got {n}")));
    }
    let m = mean(chain);
    let centred: Vec<f64> = chain.iter().map(|v| v - m).collect();
    let autocov = |k: usize| centred[..n - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    if !(c0 > 0.0) {
        return Ok(Ess { value: f64::NAN, degenerate: true });
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = (autocov(k) + autocov(k + 1)) / c0;
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 2;
    }
    Ok(Ess { value: n as f64 / tau, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinRatio {
    pub value: f64,
    /// Set when `V` needed symmetrization or negative-eigenvalue clipping.
    pub repaired: bool,
}

/// `(ε/4) · λ_max(M^{1/2} V M^{1/2})`: gradient-noise variance relative to the
/// injected noise.
pub fn langevin_ratio(eps: f64, m: &Mat3, v: &Mat3) -> Result<LangevinRatio> {
    if !is_spd(m) {
        return Err(Error::InvalidArgument("preconditioner must be symmetric positive definite".into()));
    }
    let vs = symmetrize(v);
    let eig = nalgebra::SymmetricEigen::new(vs);
    let asym = (v - v.transpose()).abs().max() > 0.0;
    let negative = eig.eigenvalues.min() < 0.0;
    let v_psd = if negative {
        eig.eigenvectors * Mat3::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0))) * eig.eigenvectors.transpose()
    } else {
        vs
    };
    let root = sqrtm_psd(m);
    let value = eps / 4.0 * max_eigenvalue(&(root * v_psd * root)).max(0.0);
    Ok(LangevinRatio { value, repaired: asym || negative })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningSummary {
    pub mean: Vec<f64>,
    /// Sample standard deviation (denominator `t − 1`); zero at `t = 1`.
    pub std: Vec<f64>,
}

/// Welford running mean and standard deviation.
pub fn running_summary(chain: &[f64]) -> Result<RunningSummary> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("running summary of an empty chain".into()));
    }
    let mut means = Vec::with_capacity(chain.len());
    let mut stds = Vec::with_capacity(chain.len());
    let (mut mu, mut m2) = (0.0, 0.0);
    for (t, &x) in chain.iter().enumerate() {
        let count = (t + 1) as f64;
        let delta = x - mu;
        mu += delta / count;
        m2 += delta * (x - mu);
        means.push(mu);
        stds.push(if t == 0 { 0.0 } else { (m2 / (count - 1.0)).max(0.0).sqrt() });
    }
    Ok(RunningSummary { mean: means, std: stds })
}
