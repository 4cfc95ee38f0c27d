// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline orchestration, run manifests and report rendering for the
//! `unlearn-audit` command-line tool.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod render;

pub use config::PipelineConfig;
pub use error::{CliError, Result, EXIT_CONFIG, EXIT_OK, EXIT_STAGE};
pub use manifest::RunManifest;
pub use pipeline::{run_pipeline, PipelineOutcome, PipelineReport};
pub use render::{render_audits, render_manifest, render_report, ReportFormat};
