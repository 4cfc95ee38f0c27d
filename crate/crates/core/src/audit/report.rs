// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-method audit records and the suppression/deletion verdict.

use serde::{Deserialize, Serialize};

use super::matching::MatchCost;
use super::steering::{ErrorTerm, Restoration};
use crate::unlearn::MethodCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Suppression,
    Deletion,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Suppression => "suppression",
            Verdict::Deletion => "deletion",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerdictThresholds {
    /// Restored accuracy at or above which information counts as recovered.
    pub high: f64,
    /// Restored accuracy at or below which nothing counts as recovered.
    pub low: f64,
    /// Largest unlearned accuracy for which a suppression verdict is allowed.
    pub unlearned_max: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            high: 0.5,
            low: 0.1,
            unlearned_max: 0.1,
        }
    }
}

/// How SAE feature bases were obtained for the two models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaeMode {
    /// One SAE per model, aligned by assignment.
    #[default]
    Separate,
    /// One SAE on pooled activations, identity alignment.
    Shared,
}

/// One layer's restoration row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAudit {
    pub layer: usize,
    pub unlearned_accuracy: f64,
    pub sae_passthrough_accuracy: f64,
    pub restored_accuracy: f64,
    /// `restored − unlearned`.
    pub delta: f64,
    /// `restored − passthrough`.
    pub delta_vs_passthrough: f64,
    pub retain_unlearned_accuracy: f64,
    pub retain_passthrough_accuracy: f64,
    pub retain_restored_accuracy: f64,
    /// `retain restored − retain unlearned`.
    pub retain_delta: f64,
    pub matching_total_cost: f64,
    /// Same measurement on forget-class training samples.
    pub train_split: Option<Restoration>,
}

impl LayerAudit {
    pub fn from_restoration(
        test: &Restoration,
        train: Option<Restoration>,
        matching_total_cost: f64,
    ) -> Self {
        let f = test.forget;
        let r = test.retain;
        Self {
            layer: test.layer,
            unlearned_accuracy: f.unlearned,
            sae_passthrough_accuracy: f.passthrough,
            restored_accuracy: f.restored,
            delta: f.restored - f.unlearned,
            delta_vs_passthrough: f.restored - f.passthrough,
            retain_unlearned_accuracy: r.unlearned,
            retain_passthrough_accuracy: r.passthrough,
            retain_restored_accuracy: r.restored,
            retain_delta: r.restored - r.unlearned,
            matching_total_cost,
            train_split: train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: String,
    pub category: MethodCategory,
    pub forget_class: usize,
    pub alpha: f64,
    pub error_term: ErrorTerm,
    pub sae_mode: SaeMode,
    pub match_cost: MatchCost,
    /// Split the headline accuracies are computed on.
    pub eval_split: String,
    pub thresholds: VerdictThresholds,
    pub layers: Vec<LayerAudit>,
    pub verdict: Verdict,
}

impl AuditReport {
    pub fn max_restored(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.restored_accuracy)
            .fold(0.0, f64::max)
    }
}

/// Classifies a method from its per-layer rows.
///
/// Suppression needs some layer to restore at least `high` while that
/// layer's unlearned accuracy is at most `unlearned_max`. Deletion needs
/// every layer to stay at or below `low`.
pub fn classify_verdict(rows: &[LayerAudit], t: &VerdictThresholds) -> Verdict {
    if rows.is_empty() {
        return Verdict::Inconclusive;
    }
    let suppressed = rows
        .iter()
        .any(|r| r.restored_accuracy >= t.high && r.unlearned_accuracy <= t.unlearned_max);
    if suppressed {
        return Verdict::Suppression;
    }
    if rows.iter().all(|r| r.restored_accuracy <= t.low) {
        return Verdict::Deletion;
    }
    Verdict::Inconclusive
}
