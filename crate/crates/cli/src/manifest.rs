use std::path::{Path, PathBuf};

use energy_ood::rng::PRNG_NAME;
use energy_ood::Result;
use serde::{Deserialize, Serialize};

use crate::io::{read_text, write_text};

/// Record of one command invocation. Replaying `args` from the same working
/// directory regenerates the outputs; only `duration_secs` differs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    /// Effective settings after defaults and config files are resolved.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub prng: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

/// What a command reports back for its manifest.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, record: RunRecord, duration_secs: f64) -> Self {
        Self {
            command: command.to_string(),
            args,
            config: record.config,
            seed: record.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            prng: PRNG_NAME.to_string(),
            inputs: record.inputs,
            outputs: record.outputs,
            duration_secs,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

/// `<dir>/run.manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn default_path(primary_output: &Path) -> PathBuf {
    if primary_output.is_dir() {
        return primary_output.join("run.manifest.json");
    }
    let mut name = primary_output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
