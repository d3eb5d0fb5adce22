//! Experiment configuration: one TOML file with a section per module.
//!
//! Every field has a default, unknown keys are rejected, and `--set
//! section.key=value` overrides reach any field. Only the output directory and
//! worker count may also come from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{GammaPrior, Priors};
use crate::kernel::{CmvpOptions, HyperParams, Precision};
use crate::linalg3::Mat3;
use crate::samplers::{GradientMode, MhConfig, SgldConfig};
use crate::solvers::CgConfig;
use crate::ulisse::UlisseConfig;

pub const ENV_OUTPUT_DIR: &str = "ULISSE_GP_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "ULISSE_GP_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub format: DataFormat,
    /// Generated data instead of a file.
    pub synthetic: Option<SyntheticSpec>,
    /// Keep only the first `subset` rows (after loading, before standardizing).
    pub subset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub max_iters: Option<usize>,
    pub q: f64,
    pub beta: f64,
    pub precision: Precision,
    /// PCG inner shift `δ`.
    pub delta: f64,
    pub block_size: usize,
    /// Fixed reduction order so reruns are bit-identical.
    pub deterministic: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iters: None,
            // q = 1 stops almost immediately on standardized labels, and the
            // roulette tail then makes gradients too heavy-tailed for SGLD.
            q: 0.01,
            beta: 1.0,
            precision: Precision::Double,
            delta: 0.1,
            block_size: 256,
            deterministic: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Each chain starts at `ψ_MAP + L z` with `L Lᵀ = M`.
    #[default]
    MapNormal,
    /// Every chain starts at the MAP.
    Map,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgldSection {
    pub eps_start: f64,
    pub eps_end: f64,
    pub gamma: f64,
    pub total_iters: usize,
    /// `inf` disables freezing.
    pub freeze_threshold: f64,
    pub variance_batch: usize,
    pub probe_redraw_period: usize,
    pub num_probes: usize,
    pub warm_start: bool,
    /// Rows used for the MAP and Hessian that define the preconditioner.
    pub map_subset: usize,
    pub map_max_steps: usize,
    /// Explicit preconditioner; estimated from the MAP when absent.
    pub preconditioner: Option<[[f64; 3]; 3]>,
    pub init: InitMode,
    /// Starting point for the MAP search, natural space.
    pub map_start: [f64; 3],
}

impl Default for SgldSection {
    fn default() -> Self {
        let s = SgldConfig::default();
        Self {
            eps_start: s.eps_start,
            eps_end: s.eps_end,
            gamma: s.gamma,
            total_iters: s.total_iters,
            freeze_threshold: 0.002,
            variance_batch: s.variance_batch,
            probe_redraw_period: s.probe_redraw_period,
            num_probes: s.num_probes,
            warm_start: s.warm_start,
            map_subset: 500,
            map_max_steps: 500,
            preconditioner: None,
            init: InitMode::MapNormal,
            map_start: [1.0, 0.1, 0.3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhSection {
    pub num_iters: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub adapt: bool,
    pub adapt_iters: usize,
    pub adapt_batch: usize,
    pub init: [f64; 3],
}

impl Default for MhSection {
    fn default() -> Self {
        let m = MhConfig::default();
        Self {
            num_iters: m.num_iters,
            burn_in: m.burn_in,
            proposal_scale: m.proposal_scale,
            adapt: m.adapt,
            adapt_iters: m.adapt_iters,
            adapt_batch: m.adapt_batch,
            init: m.init.natural(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub chains: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Required for datasets too large for the dense baseline paths.
    pub long_run: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { chains: 4, seed: 1, output_dir: PathBuf::from("out"), workers: 0, long_run: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub num_draws: usize,
    pub prior: GammaPrior,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { num_draws: 1000, prior: GammaPrior::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientCheckSection {
    pub q_values: Vec<f64>,
    pub repetitions: usize,
    pub num_draws: usize,
    pub num_probes: usize,
    pub prior: GammaPrior,
}

impl Default for GradientCheckSection {
    fn default() -> Self {
        Self { q_values: vec![0.1, 1.0], repetitions: 100, num_draws: 20, num_probes: 1, prior: GammaPrior::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Test inputs: `d` feature columns, optionally followed by a label column.
    pub inputs: Option<PathBuf>,
    pub stride: Option<usize>,
    /// Samples before this index are ignored for chains that never froze.
    pub burn_in: usize,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub priors: Priors,
    pub solver: SolverSection,
    pub sgld: SgldSection,
    pub mh: MhSection,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub gradient_check: GradientCheckSection,
    pub predict: PredictSection,
}

fn parse_override_value(raw: &str) -> toml::Value {
    // Parse as a TOML value where possible, otherwise treat the text as a string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("override `{assignment}` is not of the form key=value")]))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(vec![format!("override key `{key}` is malformed")]));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(vec![format!("override `{key}`: `{part}` is not a section")]))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `overrides` of the form `section.key=value`,
    /// then environment overrides for fields not set by a flag, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Io(e).context(format!("reading config {}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(vec![e.to_string()]))?
            }
            None => toml::Table::new(),
        };
        let flag_keys: Vec<String> =
            overrides.iter().filter_map(|o| o.split_once('=').map(|(k, _)| k.trim().to_string())).collect();
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !flag_keys.iter().any(|k| k == "run.output_dir") {
                apply_override(&mut table, &format!("run.output_dir=\"{}\"", dir.replace('\\', "\\\\").replace('"', "\\\"")))?;
            }
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            if !flag_keys.iter().any(|k| k == "run.workers") {
                apply_override(&mut table, &format!("run.workers={w}"))?;
            }
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved configuration, defaults expanded.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Every violated constraint, reported together.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        let d = &self.dataset;
        need(
            !(d.path.is_some() && d.synthetic.is_some()),
            "dataset: give either `path` or `synthetic`, not both".into(),
        );
        if let Some(s) = &d.synthetic {
            need(s.n >= 2 && s.d >= 1, format!("dataset.synthetic: need n >= 2 and d >= 1, got n = {}, d = {}", s.n, s.d));
        }
        need(d.subset.is_none_or(|m| m >= 2), "dataset.subset must be at least 2".into());
        for (name, p) in [("sigma", self.priors.sigma), ("tau", self.priors.tau), ("lambda", self.priors.lambda)] {
            need(p.validate().is_ok(), format!("priors.{name}: shape and rate must be positive and finite"));
        }
        let s = &self.solver;
        need(s.epsilon > 0.0 && s.epsilon.is_finite(), format!("solver.epsilon must be positive, got {}", s.epsilon));
        need(s.max_iters.is_none_or(|m| m > 0), "solver.max_iters must be positive".into());
        need(s.q > 0.0 && s.q.is_finite(), format!("solver.q must be positive, got {}", s.q));
        need(s.beta > 0.0 && s.beta.is_finite(), format!("solver.beta must be positive, got {}", s.beta));
        need(s.delta >= 0.0 && s.delta.is_finite(), format!("solver.delta must be non-negative, got {}", s.delta));
        need(s.block_size > 0, "solver.block_size must be positive".into());
        let g = &self.sgld;
        need(g.gamma > 0.5 && g.gamma <= 1.0, format!("sgld.gamma must lie in (0.5, 1], got {}", g.gamma));
        need(
            g.eps_start > 0.0 && g.eps_end > 0.0 && g.eps_end < g.eps_start,
            format!("sgld: need 0 < eps_end < eps_start, got {} and {}", g.eps_end, g.eps_start),
        );
        need(g.total_iters >= 2, "sgld.total_iters must be at least 2".into());
        need(g.freeze_threshold > 0.0, format!("sgld.freeze_threshold must be positive, got {}", g.freeze_threshold));
        need(g.variance_batch >= 2, "sgld.variance_batch must be at least 2".into());
        need(g.probe_redraw_period > 0, "sgld.probe_redraw_period must be positive".into());
        need(g.num_probes > 0, "sgld.num_probes must be positive".into());
        need(g.map_subset >= 2, "sgld.map_subset must be at least 2".into());
        need(g.map_start.iter().all(|&x| x > 0.0 && x.is_finite()), "sgld.map_start entries must be positive".into());
        if let Some(m) = g.preconditioner {
            need(
                crate::linalg3::is_spd(&mat3(m)),
                "sgld.preconditioner must be symmetric positive definite".into(),
            );
        }
        let m = &self.mh;
        need(m.proposal_scale >= 0.0 && m.proposal_scale.is_finite(), "mh.proposal_scale must be non-negative".into());
        need(m.burn_in <= m.num_iters, format!("mh.burn_in {} exceeds mh.num_iters {}", m.burn_in, m.num_iters));
        need(m.adapt_batch > 0, "mh.adapt_batch must be positive".into());
        need(m.init.iter().all(|&x| x > 0.0 && x.is_finite()), "mh.init entries must be positive".into());
        need(self.run.chains > 0, "run.chains must be positive".into());
        need(self.sweep.num_draws > 0, "sweep.num_draws must be positive".into());
        need(self.sweep.prior.validate().is_ok(), "sweep.prior: shape and rate must be positive".into());
        let c = &self.gradient_check;
        need(!c.q_values.is_empty() && c.q_values.iter().all(|&q| q > 0.0), "gradient_check.q_values must be non-empty and positive".into());
        need(c.repetitions >= 2, "gradient_check.repetitions must be at least 2".into());
        need(c.num_draws > 0, "gradient_check.num_draws must be positive".into());
        need(c.num_probes > 0, "gradient_check.num_probes must be positive".into());
        need(c.prior.validate().is_ok(), "gradient_check.prior: shape and rate must be positive".into());
        need(self.predict.stride.is_none_or(|s| s > 0), "predict.stride must be positive".into());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn cmvp(&self) -> CmvpOptions {
        CmvpOptions {
            block_size: self.solver.block_size,
            precision: self.solver.precision,
            deterministic: self.solver.deterministic,
        }
    }

    pub fn cg(&self) -> CgConfig {
        CgConfig { epsilon: self.solver.epsilon, max_iters: self.solver.max_iters, initial_guess: None, cmvp: self.cmvp() }
    }

    pub fn ulisse(&self, q: f64) -> UlisseConfig {
        UlisseConfig { q, beta: self.solver.beta, base: self.cg(), num_replicas: 1 }
    }

    /// SGLD settings with the given preconditioner.
    pub fn sgld_config(&self, preconditioner: Mat3) -> SgldConfig {
        let g = &self.sgld;
        SgldConfig {
            eps_start: g.eps_start,
            eps_end: g.eps_end,
            gamma: g.gamma,
            total_iters: g.total_iters,
            freeze_threshold: g.freeze_threshold.is_finite().then_some(g.freeze_threshold),
            variance_batch: g.variance_batch,
            probe_redraw_period: g.probe_redraw_period,
            num_probes: g.num_probes,
            preconditioner,
            solver: self.ulisse(self.solver.q),
            warm_start: g.warm_start,
            gradient: GradientMode::Stochastic,
            inject_noise: true,
        }
    }

    pub fn mh_config(&self) -> Result<MhConfig> {
        let m = &self.mh;
        Ok(MhConfig {
            num_iters: m.num_iters,
            burn_in: m.burn_in,
            proposal_scale: m.proposal_scale,
            adapt: m.adapt,
            adapt_iters: m.adapt_iters,
            adapt_batch: m.adapt_batch,
            init: HyperParams::new(m.init[0], m.init[1], m.init[2])?,
            ..MhConfig::default()
        })
    }
}

pub fn mat3(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

pub fn mat3_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}
