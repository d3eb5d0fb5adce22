use crate::error::{Error, Result};
use crate::gradients::{log_marginal_likelihood, Priors};
use crate::kernel::{Dataset, HyperParams};
use crate::rng::RngStream;
use crate::solvers::DENSE_LIMIT;

use super::chain::SampleChain;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhConfig {
    pub num_iters: usize,
    pub burn_in: usize,
    /// Standard deviation of the isotropic Gaussian proposal in log space.
    pub proposal_scale: f64,
    pub adapt: bool,
    /// Length of the initial phase during which the scale is tuned.
    pub adapt_iters: usize,
    pub adapt_batch: usize,
    pub target_acceptance: (f64, f64),
    pub init: HyperParams,
    /// Coordinates held fixed at `init` when false.
    pub active: [bool; 3],
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            num_iters: 50_000,
            burn_in: 10_000,
            proposal_scale: 0.1,
            adapt: true,
            adapt_iters: 10_000,
            adapt_batch: 50,
            target_acceptance: (0.2, 0.4),
            init: HyperParams::new(1.0, 1.0, 1.0).expect("valid defaults"),
            active: [true; 3],
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_scale >= 0.0) || !self.proposal_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "proposal_scale must be finite and non-negative, got {}",
                self.proposal_scale
            )));
        }
        if self.burn_in > self.num_iters {
            return Err(Error::InvalidArgument(format!(
                "burn_in {} exceeds num_iters {}",
                self.burn_in, self.num_iters
            )));
        }
        if self.adapt && self.adapt_batch == 0 {
            return Err(Error::InvalidArgument("adapt_batch must be at least 1".into()));
        }
        let (lo, hi) = self.target_acceptance;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("target acceptance band ({lo}, {hi}) is not inside (0, 1)")));
        }
        for i in 0..3 {
            if self.active[i] && !(self.init.natural()[i] > 0.0) {
                return Err(Error::InvalidArgument(format!("active parameter {i} must start strictly positive")));
            }
        }
        Ok(())
    }
}

fn log_target(psi: &[f64; 3], init: &HyperParams, active: [bool; 3], data: &Dataset, priors: &Priors) -> Result<f64> {
    let t0 = init.natural();
    let v: [f64; 3] = [0, 1, 2].map(|i| if active[i] { psi[i].exp() } else { t0[i] });
    if !v.iter().all(|x| x.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let theta = HyperParams::new(v[0], v[1], v[2])?;
    let ll = match log_marginal_likelihood(&theta, data) {
        Ok(v) => v,
        Err(Error::NotPositiveDefinite) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let c = priors.components();
    Ok(ll + (0..3).filter(|&i| active[i]).map(|i| c[i].log_density_log_space(psi[i])).sum::<f64>())
}

/// Random-walk Metropolis on `ψ` against the dense log posterior (with the
/// log-space Jacobian). With `adapt`, the proposal scale is multiplied by 1.1
/// after each batch accepting above the target band and divided by 1.1 below
/// it, during the first `adapt_iters` iterations only.
pub fn mh_sample(data: &Dataset, priors: &Priors, cfg: &MhConfig, rng: &RngStream) -> Result<SampleChain> {
    cfg.validate()?;
    if data.n() > DENSE_LIMIT {
        return Err(Error::Capacity { what: "Metropolis-Hastings", n: data.n(), limit: DENSE_LIMIT });
    }
    let mut proposals = rng.substream(0);
    let mut uniforms = rng.substream(1);
    let init = cfg.init.natural().map(f64::ln);
    let mut chain = SampleChain::empty(init, rng.seed());
    let mut accepted = Vec::with_capacity(cfg.num_iters);
    let mut psi = init;
    let mut current = log_target(&psi, &cfg.init, cfg.active, data, priors)?;
    if current == f64::NEG_INFINITY {
        return Err(Error::NotPositiveDefinite);
    }
    let mut scale = cfg.proposal_scale;
    let mut batch_accepts = 0usize;
    for t in 0..cfg.num_iters {
        let mut prop = psi;
        for i in (0..3).filter(|&i| cfg.active[i]) {
            prop[i] += scale * proposals.standard_normal();
        }
        let u = uniforms.uniform();
        let accept = if prop == psi {
            true
        } else {
            let lp = log_target(&prop, &cfg.init, cfg.active, data, priors)?;
            lp > f64::NEG_INFINITY && u.ln() < lp - current && {
                current = lp;
                true
            }
        };
        if accept {
            psi = prop;
            batch_accepts += 1;
        }
        chain.samples.push(psi);
        chain.step_sizes.push(scale);
        accepted.push(accept);
        if cfg.adapt && t < cfg.adapt_iters && (t + 1) % cfg.adapt_batch == 0 {
            let rate = batch_accepts as f64 / cfg.adapt_batch as f64;
            if rate > cfg.target_acceptance.1 {
                scale *= 1.1;
            } else if rate < cfg.target_acceptance.0 {
                scale /= 1.1;
            }
        }
        if (t + 1) % cfg.adapt_batch.max(1) == 0 {
            batch_accepts = 0;
        }
    }
    chain.accepted = Some(accepted);
    chain.burn_in = cfg.burn_in;
    Ok(chain)
}
