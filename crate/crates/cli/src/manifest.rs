// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifest: what each stage wrote, keyed by content digests.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// File name of the manifest inside a run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Version string recorded in manifests and folded into stage keys.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Done,
    Failed,
}

/// One file written by a stage, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of everything the stage reads: parameters and input artifact digests.
    pub key: String,
    pub artifacts: Vec<Artifact>,
    pub status: StageStatus,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub defaults_version: u32,
    pub created_at: u64,
    pub updated_at: u64,
    pub stages: BTreeMap<String, StageRecord>,
    /// Stages that ran (rather than being reused) in the latest invocation, in order.
    pub executed: Vec<String>,
    pub notes: Vec<String>,
    pub failure: Option<StageFailure>,
}

impl RunManifest {
    pub fn new(config_digest: String, defaults_version: u32) -> Self {
        let now = unix_now();
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_digest,
            defaults_version,
            created_at: now,
            updated_at: now,
            stages: BTreeMap::new(),
            executed: Vec::new(),
            notes: Vec::new(),
            failure: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Manifest(format!("unreadable manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// True when `stage` finished under `key` and every artifact is still on disk unchanged.
    pub fn is_fresh(&self, root: &Path, stage: &str, key: &str) -> bool {
        match self.stages.get(stage) {
            Some(rec) if rec.status == StageStatus::Done && rec.key == key => rec
                .artifacts
                .iter()
                .all(|a| file_digest(&root.join(&a.path)).is_ok_and(|d| d == a.sha256)),
            _ => false,
        }
    }

    /// Digest of one artifact of a finished stage.
    pub fn artifact_digest(&self, stage: &str, path: &str) -> Result<&str> {
        self.stages
            .get(stage)
            .and_then(|rec| rec.artifacts.iter().find(|a| a.path == path))
            .map(|a| a.sha256.as_str())
            .ok_or_else(|| {
                CliError::Manifest(format!("no artifact `{path}` recorded for stage `{stage}`"))
            })
    }

    /// Checks that every listed artifact exists under `root` with its recorded digest.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (stage, rec) in &self.stages {
            for a in &rec.artifacts {
                let actual = file_digest(&root.join(&a.path))?;
                if actual != a.sha256 {
                    return Err(CliError::Manifest(format!(
                        "stage `{stage}`: digest mismatch for {}",
                        a.path
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn add_note(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !self.notes.contains(&note) {
            self.notes.push(note);
        }
    }
}
