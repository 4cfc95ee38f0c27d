// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-feature activation statistics and class-expert selection.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, AuditError, Result};
use crate::sae::SparseCode;

/// Activation and co-activation counts of every latent against every class.
///
/// An activation event is a strictly positive code value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub num_features: usize,
    pub num_classes: usize,
    pub total_samples: usize,
    pub class_counts: Vec<usize>,
    pub activation_count: Vec<usize>,
    /// Row-major `num_features × num_classes`.
    pub co_activation: Vec<usize>,
}

impl FeatureStats {
    pub fn co_count(&self, feature: usize, class: usize) -> usize {
        self.co_activation[feature * self.num_classes + class]
    }

    /// `P(class | feature active)`; `None` when the feature never fires.
    pub fn precision(&self, feature: usize, class: usize) -> Option<f64> {
        let active = self.activation_count[feature];
        (active > 0).then(|| self.co_count(feature, class) as f64 / active as f64)
    }

    /// `P(feature active | class)`; `None` when the class has no samples.
    pub fn recall(&self, feature: usize, class: usize) -> Option<f64> {
        let n = self.class_counts[class];
        (n > 0).then(|| self.co_count(feature, class) as f64 / n as f64)
    }

    /// Harmonic mean of precision and recall, 0 when either is undefined or both are 0.
    pub fn f1(&self, feature: usize, class: usize) -> f64 {
        match (self.precision(feature, class), self.recall(feature, class)) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        }
    }

    pub fn never_active(&self, feature: usize) -> bool {
        self.activation_count[feature] == 0
    }

    pub fn always_active(&self, feature: usize) -> bool {
        self.activation_count[feature] == self.total_samples
    }
}

pub fn compute_feature_stats(
    code: &SparseCode,
    labels: &[usize],
    num_classes: usize,
) -> Result<FeatureStats> {
    let values = &code.values;
    if values.rows() == 0 {
        return input_err("cannot compute feature statistics on an empty batch");
    }
    if values.rows() != labels.len() {
        return input_err(format!(
            "{} code rows for {} labels",
            values.rows(),
            labels.len()
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return input_err(format!(
            "label {bad} out of range for {num_classes} classes"
        ));
    }
    let m = values.cols();
    let mut class_counts = vec![0; num_classes];
    let mut activation_count = vec![0; m];
    let mut co_activation = vec![0; m * num_classes];
    for (row, &y) in values.row_iter().zip(labels) {
        class_counts[y] += 1;
        for (j, &v) in row.iter().enumerate() {
            if v > 0.0 {
                activation_count[j] += 1;
                co_activation[j * num_classes + y] += 1;
            }
        }
    }
    Ok(FeatureStats {
        num_features: m,
        num_classes,
        total_samples: values.rows(),
        class_counts,
        activation_count,
        co_activation,
    })
}

/// Activation-frequency bounds outside which a feature is uninformative.
///
/// A feature survives when `lo < activation_count / total < hi`. The
/// defaults `(0, 1)` drop exactly the never-active and always-active ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyFilter {
    pub lo: f64,
    pub hi: f64,
}

impl Default for FrequencyFilter {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

/// Indices of features that are neither (near-)never nor (near-)always active.
pub fn filter_uninformative(stats: &FeatureStats, filter: FrequencyFilter) -> Vec<usize> {
    let total = stats.total_samples as f64;
    (0..stats.num_features)
        .filter(|&j| {
            let count = stats.activation_count[j];
            if count == 0 || count == stats.total_samples {
                return false;
            }
            let freq = count as f64 / total;
            freq > filter.lo && freq < filter.hi
        })
        .collect()
}

/// Where an expert set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSource {
    pub model_id: String,
    pub layer: usize,
}

/// The top `⌊5K/4⌋` features for one class, ordered by descending F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertFeatureSet {
    pub class: usize,
    pub indices: Vec<usize>,
    pub f1_scores: Vec<f64>,
    pub source: FeatureSource,
}

/// Number of experts selected per class for TopK sparsity `k`.
pub fn expert_count(k: usize) -> usize {
    5 * k / 4
}

/// Picks the `expert_count(k)` surviving features with the highest F1 for `class`.
pub fn select_experts(
    stats: &FeatureStats,
    survivors: &[usize],
    class: usize,
    k: usize,
    source: FeatureSource,
) -> Result<ExpertFeatureSet> {
    if class >= stats.num_classes {
        return input_err(format!("class {class} out of range"));
    }
    let want = expert_count(k);
    let mut scored: Vec<(usize, f64)> = survivors
        .iter()
        .map(|&j| (j, stats.f1(j, class)))
        .filter(|&(_, f)| f > 0.0)
        .collect();
    if scored.len() < want {
        return Err(AuditError::Selection {
            class,
            message: format!(
                "only {} surviving features score above zero, need {want}",
                scored.len()
            ),
        });
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(want);
    Ok(ExpertFeatureSet {
        class,
        indices: scored.iter().map(|&(j, _)| j).collect(),
        f1_scores: scored.iter().map(|&(_, f)| f).collect(),
        source,
    })
}
