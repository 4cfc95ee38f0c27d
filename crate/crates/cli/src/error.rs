// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;
use unlearn_audit::AuditError;

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Process exit code for unusable configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for a stage that failed while running.
pub const EXIT_STAGE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },

    #[error(transparent)]
    Audit(#[from] AuditError),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Audit(AuditError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_STAGE,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
