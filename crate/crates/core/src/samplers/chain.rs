use crate::error::{Error, Result};
use crate::linalg3::Mat3;

/// Gradient-noise covariance estimated over one batch of SGLD iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceBatch {
    /// Iteration (1-based) that closed the batch.
    pub iteration: usize,
    pub v: Mat3,
    /// `(ε/4) λ_max(M^{1/2} V M^{1/2})` at the closing step size.
    pub ratio: f64,
    /// The covariance needed symmetrization or eigenvalue clipping.
    pub repaired: bool,
}

/// Samples in log space. `samples[i]` is the state after iteration `i + 1`,
/// produced with step size (SGLD) or proposal scale (MH) `step_sizes[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleChain {
    pub init: [f64; 3],
    pub samples: Vec<[f64; 3]>,
    pub step_sizes: Vec<f64>,
    /// Index of the first sample drawn with the frozen step size.
    pub frozen_at: Option<usize>,
    /// Samples before this index are excluded from posterior summaries.
    pub burn_in: usize,
    /// Metropolis–Hastings accept decisions.
    pub accepted: Option<Vec<bool>>,
    pub gradient_variance_trace: Vec<VarianceBatch>,
    pub seed: u64,
    /// Total CG iterations spent on gradient estimates.
    pub solver_iterations: u64,
}

impl SampleChain {
    pub(crate) fn empty(init: [f64; 3], seed: u64) -> Self {
        Self {
            init,
            samples: Vec::new(),
            step_sizes: Vec::new(),
            frozen_at: None,
            burn_in: 0,
            accepted: None,
            gradient_variance_trace: Vec::new(),
            seed,
            solver_iterations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Natural-space mirror `exp(ψ)` of sample `i`.
    pub fn natural(&self, i: usize) -> [f64; 3] {
        self.samples[i].map(f64::exp)
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen_at.is_some_and(|f| i >= f)
    }

    /// Post-burn-in samples.
    pub fn posterior(&self) -> &[[f64; 3]] {
        &self.samples[self.burn_in.min(self.samples.len())..]
    }

    /// Column `p` of the post-burn-in samples.
    pub fn posterior_component(&self, p: usize) -> Vec<f64> {
        self.posterior().iter().map(|s| s[p]).collect()
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        let a = self.accepted.as_ref()?;
        if a.is_empty() {
            return None;
        }
        Some(a.iter().filter(|&&x| x).count() as f64 / a.len() as f64)
    }

    /// Checks the per-iteration vectors agree in length and the freeze contract.
    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        if self.step_sizes.len() != n {
            return Err(Error::DimensionMismatch { what: "step sizes", expected: n, got: self.step_sizes.len() });
        }
        if let Some(a) = &self.accepted {
            if a.len() != n {
                return Err(Error::DimensionMismatch { what: "accept flags", expected: n, got: a.len() });
            }
        }
        if self.burn_in > n {
            return Err(Error::InvalidArgument(format!("burn-in {} exceeds chain length {n}", self.burn_in)));
        }
        if let Some(f) = self.frozen_at {
            if f > n {
                return Err(Error::InvalidArgument(format!("frozen_at {f} exceeds chain length {n}")));
            }
            if let Some(first) = self.step_sizes.get(f) {
                if self.step_sizes[f..].iter().any(|e| e != first) {
                    return Err(Error::InvalidArgument("step size changes after the freeze".into()));
                }
            }
        }
        Ok(())
    }
}
