// SPDX-License-Identifier: MIT OR Apache-2.0

//! Expert selection, feature alignment, ablation, restoration and verdicts.

mod hungarian;
mod matching;
mod report;
mod stats;
mod steering;

pub use hungarian::{solve_assignment, Assignment};
pub use matching::{
    correlation_cost, cosine_cost, digest_matrix, match_features, FeatureMatching, MatchCost,
};
pub use report::{classify_verdict, AuditReport, LayerAudit, SaeMode, Verdict, VerdictThresholds};
pub use stats::{
    compute_feature_stats, expert_count, filter_uninformative, select_experts, ExpertFeatureSet,
    FeatureSource, FeatureStats, FrequencyFilter,
};
pub use steering::{
    restore, steer_codes, steered_activations, validate_experts, AblationOutcome, ErrorTerm,
    InterventionAccuracy, Restoration, SteeredActivations, SteeringConfig,
};

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::data::Dataset;
use crate::error::{config_err, Result};
use crate::model::{CapturedActivation, LayeredClassifier};
use crate::numerics::Matrix;
use crate::sae::{train_sae, SaeConfig, SaeModel};
use crate::unlearn::MethodCategory;

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Hidden layers to audit, 1-based.
    pub layers: Vec<usize>,
    pub alpha: f64,
    pub error_term: ErrorTerm,
    pub sae_mode: SaeMode,
    pub match_cost: MatchCost,
    pub thresholds: VerdictThresholds,
    pub frequency_filter: FrequencyFilter,
    /// Also measure restoration on forget-class training samples.
    pub record_train_split: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            layers: vec![3, 4, 5],
            alpha: 10.0,
            error_term: ErrorTerm::Drop,
            sae_mode: SaeMode::Separate,
            match_cost: MatchCost::DecoderCosine,
            thresholds: VerdictThresholds::default(),
            frequency_filter: FrequencyFilter::default(),
            record_train_split: true,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self, num_hidden: usize) -> Result<()> {
        if self.layers.is_empty() {
            return config_err("no audit layers given");
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l == 0 || l > num_hidden) {
            return config_err(format!("audit layer {l} outside [1, {num_hidden}]"));
        }
        if !self.alpha.is_finite() {
            return config_err("alpha must be finite");
        }
        let t = &self.thresholds;
        if !(0.0..=1.0).contains(&t.low) || !(0.0..=1.0).contains(&t.high) || t.low > t.high {
            return config_err("verdict thresholds must satisfy 0 <= low <= high <= 1");
        }
        if !(0.0..=1.0).contains(&t.unlearned_max) {
            return config_err("unlearned_max must lie in [0, 1]");
        }
        let f = &self.frequency_filter;
        if !(0.0..=1.0).contains(&f.lo) || !(0.0..=1.0).contains(&f.hi) || f.lo >= f.hi {
            return config_err("frequency filter must satisfy 0 <= lo < hi <= 1");
        }
        if self.sae_mode == SaeMode::Shared && self.match_cost != MatchCost::Identity {
            return config_err("shared-SAE mode requires identity matching");
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------------
// Pipeline steps
// ----------------------------------------------------------------------------

/// Encodes `ds` through `sae` at its layer and picks the experts for `class`.
pub fn select_class_experts(
    model: &LayeredClassifier,
    model_id: &str,
    sae: &SaeModel,
    ds: &Dataset,
    class: usize,
    filter: FrequencyFilter,
) -> Result<ExpertFeatureSet> {
    let layer = sae.layer();
    let code = sae.encode(&model.capture(&ds.inputs, layer)?)?;
    let stats = compute_feature_stats(&code, &ds.labels, ds.num_classes)?;
    let survivors = filter_uninformative(&stats, filter);
    debug!(layer, survivors = survivors.len(), "feature filter");
    select_experts(
        &stats,
        &survivors,
        class,
        sae.k(),
        FeatureSource {
            model_id: model_id.to_string(),
            layer,
        },
    )
}

/// Trains one SAE on activations of both models stacked together.
pub fn train_shared_sae(
    orig: &LayeredClassifier,
    unl: &LayeredClassifier,
    inputs: &Matrix,
    layer: usize,
    config: &SaeConfig,
) -> Result<SaeModel> {
    let a = orig.capture(inputs, layer)?;
    let b = unl.capture(inputs, layer)?;
    let pooled = CapturedActivation {
        layer,
        values: Matrix::vstack(&[&a.values, &b.values])?,
    };
    train_sae(&pooled, config, "shared")
}

/// Aligns, steers and scores one layer.
#[allow(clippy::too_many_arguments)]
pub fn audit_layer(
    orig: &LayeredClassifier,
    unl: &LayeredClassifier,
    sae_orig: &SaeModel,
    sae_unl: &SaeModel,
    experts: &ExpertFeatureSet,
    cfg: &AuditConfig,
    test: &Dataset,
    train: Option<&Dataset>,
) -> Result<LayerAudit> {
    let layer = sae_orig.layer();
    let matching = match cfg.sae_mode {
        SaeMode::Shared => FeatureMatching::identity(sae_orig.m()),
        SaeMode::Separate => {
            let po = orig.capture(&test.inputs, layer)?;
            let pu = unl.capture(&test.inputs, layer)?;
            match_features(sae_orig, sae_unl, cfg.match_cost, Some((&po, &pu)))?
        }
    };
    let steering = SteeringConfig {
        alpha: cfg.alpha,
        layer,
        experts: experts.clone(),
        matching,
        error_term: cfg.error_term,
    };
    let on_test = restore(orig, unl, sae_orig, sae_unl, &steering, test)?;
    let on_train = match train {
        Some(ds) if cfg.record_train_split => {
            let forget = ds.filter(|y| y == experts.class);
            Some(restore(orig, unl, sae_orig, sae_unl, &steering, &forget)?)
        }
        _ => None,
    };
    debug!(
        layer,
        unlearned = on_test.forget.unlearned,
        restored = on_test.forget.restored,
        "layer audited"
    );
    Ok(LayerAudit::from_restoration(
        &on_test,
        on_train,
        steering.matching.total_cost,
    ))
}

/// Wraps per-layer rows into a report and attaches the verdict.
pub fn build_report(
    method: &str,
    category: MethodCategory,
    forget_class: usize,
    cfg: &AuditConfig,
    layers: Vec<LayerAudit>,
) -> AuditReport {
    let verdict = classify_verdict(&layers, &cfg.thresholds);
    AuditReport {
        method: method.to_string(),
        category,
        forget_class,
        alpha: cfg.alpha,
        error_term: cfg.error_term,
        sae_mode: cfg.sae_mode,
        match_cost: cfg.match_cost,
        eval_split: "test".to_string(),
        thresholds: cfg.thresholds,
        layers,
        verdict,
    }
}
