// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by the audit toolkit.
#[derive(Debug, Error)]
pub enum AuditError {
    /// Operand shapes do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid caller-supplied input (out-of-range label, empty batch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged or otherwise failed.
    #[error("training error at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    /// Expert feature selection could not produce a full set.
    #[error("selection error for class {class}: {message}")]
    Selection { class: usize, message: String },

    /// A binary container or serialized artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AuditError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AuditError::Shape(msg.into()))
}

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AuditError::Input(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AuditError::Config(msg.into()))
}
