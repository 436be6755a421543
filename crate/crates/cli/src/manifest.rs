//! Run manifests: what was run, how long it took and what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::output::write_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    pub residual_norms: BTreeMap<String, f64>,
    pub slopes: BTreeMap<String, f64>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("mselab".to_owned(), env!("CARGO_PKG_VERSION").to_owned());
        RunManifest {
            command: command.to_owned(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions,
            wall_times: BTreeMap::new(),
            residual_norms: BTreeMap::new(),
            slopes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Run `f` and record its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.wall_times.insert(stage.to_owned(), t.elapsed().as_secs_f64());
        out
    }

    /// Register a file already written under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name))?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputRecord { path: name.to_owned(), sha256: hex(&Sha256::digest(&bytes)) });
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}_manifest.json", self.command)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        write_file(&path, &serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
