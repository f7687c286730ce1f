use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::latency::LatencyReport;

use super::CliError;

/// Reproducibility record for one command invocation. Each run directory
/// holds exactly one, at `manifest.json`; re-running the command with the
/// recorded config reproduces the genotype artifacts byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    /// Fully resolved configuration, CLI overrides applied.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// SHA-256 of every input file, keyed by path as given.
    pub input_hashes: BTreeMap<String, String>,
    /// Artifact paths relative to the run directory.
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyReport>,
    /// Total epochs trained over this run and everything it resumed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_done: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub budget_ms: f64,
    pub chosen_seed: u64,
    pub genotype_hashes: Vec<(u64, String)>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::Runtime(format!("serialize config: {e}")))?;
        Ok(RunManifest {
            command: command.into(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seeds,
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            latency: None,
            epochs_done: None,
            search: None,
        })
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = hash_file(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Create the run directory, refusing one that already holds a manifest so
/// completed runs are never overwritten.
pub fn fresh_run_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create run directory {}: {e}", dir.display())))?;
    if dir.join("manifest.json").exists() {
        return Err(CliError::Usage(format!(
            "run directory {} already holds a manifest; pick a fresh directory",
            dir.display()
        )));
    }
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Runtime(format!("serialize manifest: {e}")))?;
    body.push('\n');
    fs::write(dir.join("manifest.json"), body)
        .map_err(|e| CliError::Runtime(format!("write manifest: {e}")))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))
}
