//! Run manifest: written with status "running" before any work, finalized
//! with the outcome and the output inventory afterwards.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_SCHEMA: &str = "run-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub workers: usize,
    pub strict: bool,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub stages: Vec<StageStatus>,
    pub outputs: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn begin(
        command: &str,
        config_text: &str,
        seed: u64,
        workers: usize,
        strict: bool,
        out_dir: &Path,
    ) -> Result<Self, CliError> {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        let config_hash = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            workers,
            strict,
            started_unix: now_unix(),
            finished_unix: None,
            status: "running".to_string(),
            stages: Vec::new(),
            outputs: Vec::new(),
        };
        manifest.write(out_dir)?;
        Ok(manifest)
    }

    pub fn stage(&mut self, name: &str, status: &str, detail: impl Into<String>) {
        self.stages.push(StageStatus {
            name: name.to_string(),
            status: status.to_string(),
            detail: detail.into(),
        });
    }

    pub fn output(&mut self, file_name: impl Into<String>) {
        self.outputs.push(file_name.into());
    }

    pub fn finalize(&mut self, status: &str, out_dir: &Path) -> Result<(), CliError> {
        self.status = status.to_string();
        self.finished_unix = Some(now_unix());
        self.write(out_dir)
    }

    fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Internal(format!("manifest encode: {e}")))?;
        std::fs::write(out_dir.join(MANIFEST_FILE), text)
            .map_err(|e| CliError::Internal(format!("manifest write: {e}")))?;
        Ok(())
    }
}
