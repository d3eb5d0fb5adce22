use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A seed and the stream path it feeds, e.g. `chain 3` → `root.substream(3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub purpose: String,
    pub seed: u64,
    pub stream: String,
}

/// Everything needed to attribute and rerun one CLI invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub deterministic: bool,
    pub workers: usize,
    pub seeds: Vec<SeedRecord>,
    pub counters: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    /// Resolved configuration, defaults expanded.
    pub config: serde_json::Value,
}

pub struct ManifestBuilder {
    manifest: Manifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, deterministic: bool, workers: usize) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix,
                wall_clock_secs: 0.0,
                deterministic,
                workers,
                seeds: Vec::new(),
                counters: BTreeMap::new(),
                outputs: Vec::new(),
                warnings: Vec::new(),
                config,
            },
            clock: Instant::now(),
        }
    }

    pub fn seed(&mut self, purpose: impl Into<String>, seed: u64, stream: impl Into<String>) {
        self.manifest.seeds.push(SeedRecord { purpose: purpose.into(), seed, stream: stream.into() });
    }

    pub fn count(&mut self, name: &str, value: u64) {
        *self.manifest.counters.entry(name.to_string()).or_insert(0) += value;
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let m = message.into();
        eprintln!("warning: {m}");
        self.manifest.warnings.push(m);
    }

    pub fn finish(mut self, dir: &Path) -> Result<Manifest> {
        self.manifest.wall_clock_secs = self.clock.elapsed().as_secs_f64();
        super::io::write_json(&dir.join("manifest.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}
