//! Run-records: the resolved configuration plus content hashes of everything
//! read and written, enough to replay a command and check the result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_error, CliError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub created_unix_s: u64,
    pub jobs: usize,
    pub config: RunConfig,
    /// Input files keyed by the path they were read from.
    pub inputs: BTreeMap<String, String>,
    /// Written files keyed by their path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Files touched by one command.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub inputs: Vec<PathBuf>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
}

impl Artifacts {
    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, rel: impl Into<PathBuf>) {
        self.outputs.push(rel.into());
    }

    pub fn extend(&mut self, other: Artifacts) {
        self.inputs.extend(other.inputs);
        self.outputs.extend(other.outputs);
    }
}

fn key(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

impl RunRecord {
    pub fn build(command: &str, cfg: &RunConfig, jobs: usize, art: &Artifacts) -> Result<Self, CliError> {
        let mut inputs = BTreeMap::new();
        for p in &art.inputs {
            inputs.insert(key(p), sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for rel in &art.outputs {
            outputs.insert(key(rel), sha256_file(&cfg.output_dir.join(rel))?);
        }
        let created_unix_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s,
            jobs,
            config: cfg.clone(),
            inputs,
            outputs,
        })
    }

    pub fn path_for(output_dir: &Path, command: &str) -> PathBuf {
        output_dir.join("runs").join(format!("{command}.json"))
    }

    pub fn write(&self) -> Result<PathBuf, CliError> {
        let path = Self::path_for(&self.config.output_dir, &self.command);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Names of inputs or outputs whose hashes differ from `other`.
    pub fn differences(&self, other: &RunRecord) -> Vec<String> {
        let mut out = Vec::new();
        for (what, a, b) in [
            ("input", &self.inputs, &other.inputs),
            ("output", &self.outputs, &other.outputs),
        ] {
            for (k, h) in a {
                if b.get(k) != Some(h) {
                    out.push(format!("{what} {k}"));
                }
            }
            for k in b.keys().filter(|k| !a.contains_key(*k)) {
                out.push(format!("{what} {k}"));
            }
        }
        out
    }
}
