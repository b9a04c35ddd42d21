//! JSON record of one command invocation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use envsound::{Error, Result};

pub const RUN_FORMAT: &str = "envsound-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// Command-specific arguments (input kind, artifact paths).
    pub args: serde_json::Value,
    pub status: Status,
    pub steps_completed: Option<usize>,
    pub outputs: Vec<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    /// The command failed part-way; listed outputs may be incomplete.
    Partial,
}

pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, args: serde_json::Value) -> Result<Self> {
        Ok(Self {
            format: RUN_FORMAT.into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_sha256: config_hash(cfg)?,
            config: cfg.clone(),
            args,
            status: Status::Complete,
            steps_completed: None,
            outputs: Vec::new(),
            error: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
