//! CSV artifacts. Floats are written in shortest round-trip form so re-reading
//! a file reproduces the in-memory values exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::predictive::PredictiveResult;
use crate::samplers::SampleChain;
use crate::solvers::SweepRow;
use crate::Scaler;

pub const CHAIN_COLUMNS: [&str; 10] =
    ["iter", "log_sigma", "log_tau", "log_lambda", "sigma", "tau", "lambda", "eps_t", "frozen", "accepted"];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv(e).context(format!("creating {}", path.display())))
}

pub fn write_chain_csv(path: &Path, chain: &SampleChain) -> Result<()> {
    chain.validate()?;
    let mut w = writer(path)?;
    w.write_record(CHAIN_COLUMNS)?;
    for (i, psi) in chain.samples.iter().enumerate() {
        let nat = chain.natural(i);
        let accepted = match &chain.accepted {
            Some(a) => (a[i] as u8).to_string(),
            None => String::new(),
        };
        w.write_record([
            (i + 1).to_string(),
            psi[0].to_string(),
            psi[1].to_string(),
            psi[2].to_string(),
            nat[0].to_string(),
            nat[1].to_string(),
            nat[2].to_string(),
            chain.step_sizes[i].to_string(),
            (chain.is_frozen(i) as u8).to_string(),
            accepted,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a chain file. `frozen_at` comes from the `frozen` column; the burn-in is
/// `frozen_at` when present and `default_burn_in` otherwise.
pub fn read_chain_csv(path: &Path, default_burn_in: usize) -> Result<SampleChain> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv(e).context(format!("opening {}", path.display())))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("{}: missing column `{name}`", path.display()),
        })
    };
    let idx = [col("log_sigma")?, col("log_tau")?, col("log_lambda")?];
    let eps_col = col("eps_t")?;
    let frozen_col = col("frozen")?;
    let accepted_col = headers.iter().position(|h| h == "accepted");
    let mut samples = Vec::new();
    let mut step_sizes = Vec::new();
    let mut frozen_at = None;
    let mut accepted: Vec<bool> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        let num = |c: usize| -> Result<f64> {
            let cell = rec.get(c).unwrap_or("");
            cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{}: column {}: `{cell}` is not a number", path.display(), c + 1),
            })
        };
        samples.push([num(idx[0])?, num(idx[1])?, num(idx[2])?]);
        step_sizes.push(num(eps_col)?);
        if num(frozen_col)? != 0.0 && frozen_at.is_none() {
            frozen_at = Some(samples.len() - 1);
        }
        if let Some(a) = accepted_col {
            match rec.get(a).map(str::trim) {
                Some("") | None => {}
                Some(_) => accepted.push(num(a)? != 0.0),
            }
        }
    }
    if !accepted.is_empty() && accepted.len() != samples.len() {
        return Err(Error::Parse { line: 1, message: format!("{}: `accepted` column is partially filled", path.display()) });
    }
    let chain = SampleChain {
        init: samples.first().copied().unwrap_or([0.0; 3]),
        burn_in: frozen_at.unwrap_or(default_burn_in.min(samples.len())),
        samples,
        step_sizes,
        frozen_at,
        accepted: (!accepted.is_empty()).then_some(accepted),
        gradient_variance_trace: Vec::new(),
        seed: 0,
        solver_iterations: 0,
    };
    chain.validate()?;
    Ok(chain)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One `(iter, statistic, value)` record.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticRow {
    pub iter: usize,
    pub statistic: String,
    pub value: f64,
}

pub fn write_diagnostics_csv(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// `(test_index, mean, variance)`, plus original-unit columns when a scaler is given.
pub fn write_predictions_csv(path: &Path, result: &PredictiveResult, scaler: Option<&Scaler>) -> Result<()> {
    let mut w = writer(path)?;
    match scaler {
        Some(_) => w.write_record(["test_index", "mean", "variance", "mean_orig", "variance_orig"])?,
        None => w.write_record(["test_index", "mean", "variance"])?,
    }
    for (j, (m, v)) in result.mean.iter().zip(&result.variance).enumerate() {
        let mut rec = vec![j.to_string(), m.to_string(), v.to_string()];
        if let Some(s) = scaler {
            rec.push(s.label_mean(*m).to_string());
            rec.push(s.label_variance(*v).to_string());
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(e).context(format!("writing {}", path.display())))
}

pub fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
