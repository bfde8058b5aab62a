use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// What a run read, resolved and wrote. Replaying `args` with a fresh
/// `--out` reproduces every listed output byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved arguments (seed included, `--out` and `--threads` excluded).
    pub args: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub master_seed: u64,
    /// `"flag"` or `"entropy"`.
    pub seed_source: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub version: String,
}

pub const FILE: &str = "manifest.json";

pub fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn read(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("manifest: {e}")))
}
