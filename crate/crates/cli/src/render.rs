// SPDX-License-Identifier: MIT OR Apache-2.0

//! Method-by-layer restoration table in CSV, JSON or Markdown.
//!
//! Each layer contributes an unlearned-accuracy column and a restored column
//! written as `restored (+delta)` in percent. Restored cells at or above the
//! report's `high` threshold are flagged: `*` suffix in CSV, bold in Markdown,
//! `"flagged": true` in JSON.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use unlearn_audit::audit::AuditReport;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{load_report, PipelineReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(CliError::Config(format!(
                "unknown report format `{other}` (csv, json, markdown)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Cell {
    layer: usize,
    unlearned: f64,
    restored: f64,
    delta: f64,
    flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Row {
    method: String,
    category: String,
    cells: Vec<Cell>,
    verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Table {
    layers: Vec<usize>,
    rows: Vec<Row>,
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn table(audits: &[&AuditReport]) -> Table {
    let rows = audits
        .iter()
        .map(|a| Row {
            method: a.method.clone(),
            category: a.category.to_string(),
            cells: a
                .layers
                .iter()
                .map(|l| Cell {
                    layer: l.layer,
                    unlearned: l.unlearned_accuracy,
                    restored: l.restored_accuracy,
                    delta: l.delta,
                    flagged: l.restored_accuracy >= a.thresholds.high,
                })
                .collect(),
            verdict: a.verdict.to_string(),
        })
        .collect();
    Table {
        layers: audits
            .first()
            .map(|a| a.layers.iter().map(|l| l.layer).collect())
            .unwrap_or_default(),
        rows,
    }
}

fn header(layers: &[usize]) -> Vec<String> {
    let mut h = vec!["method".to_string(), "category".to_string()];
    for l in layers {
        h.push(format!("L{l} unlearned"));
        h.push(format!("L{l} restored"));
    }
    h.push("verdict".to_string());
    h
}

fn restored_text(c: &Cell) -> String {
    format!("{:.2} ({:+.2})", pct(c.restored), pct(c.delta))
}

fn cells_text(row: &Row, flag: impl Fn(String) -> String) -> Vec<String> {
    let mut out = vec![row.method.clone(), row.category.clone()];
    for c in &row.cells {
        out.push(format!("{:.2}", pct(c.unlearned)));
        let text = restored_text(c);
        out.push(if c.flagged { flag(text) } else { text });
    }
    out.push(row.verdict.clone());
    out
}

fn render_csv(t: &Table) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&t.layers))?;
    for row in &t.rows {
        w.write_record(cells_text(row, |s| format!("{s}*")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(format!("csv encoding: {e}")))
}

fn render_markdown(t: &Table) -> String {
    let h = header(&t.layers);
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", h.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(h.len()));
    for row in &t.rows {
        let _ = writeln!(
            out,
            "| {} |",
            cells_text(row, |s| format!("**{s}**")).join(" | ")
        );
    }
    out
}

/// Renders the table of `report`; `None` yields a header-only document.
pub fn render_report(report: Option<&PipelineReport>, format: ReportFormat) -> Result<String> {
    let audits: Vec<&AuditReport> = report
        .map(|r| r.methods.iter().map(|m| &m.audit).collect())
        .unwrap_or_default();
    render_table(&table(&audits), format)
}

/// Renders one row per audit report.
pub fn render_audits(audits: &[AuditReport], format: ReportFormat) -> Result<String> {
    let refs: Vec<&AuditReport> = audits.iter().collect();
    render_table(&table(&refs), format)
}

fn render_table(t: &Table, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => render_csv(t),
        ReportFormat::Markdown => Ok(render_markdown(t)),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(t)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Renders the report recorded in `manifest`, whose run directory is `root`.
pub fn render_manifest(
    root: &Path,
    manifest: &RunManifest,
    format: ReportFormat,
) -> Result<String> {
    let report = load_report(root, manifest)?;
    render_report(report.as_ref(), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let csv = render_report(None, ReportFormat::Csv).unwrap();
        assert_eq!(csv, "method,category,verdict\n");
        let md = render_report(None, ReportFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
        let json = render_report(None, ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn format_names() {
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
