// SPDX-License-Identifier: MIT OR Apache-2.0

//! Expert ablation and selective restoration through SAE codes.
//!
//! Restoration blends each matched expert latent of the unlearned code
//! toward the original model's value:
//!
//! ```text
//! ĉ[π(j)] = c_unl[π(j)] + α · (c_orig[j] − c_unl[π(j)])     for j in experts
//! ĉ[t]    = c_unl[t]                                       otherwise
//! ```
//!
//! The steered code is decoded by the unlearned model's SAE and fed through
//! the unlearned model's remaining layers.

use serde::{Deserialize, Serialize};

use super::matching::FeatureMatching;
use super::stats::ExpertFeatureSet;
use crate::data::Dataset;
use crate::error::{config_err, input_err, Result};
use crate::model::{ActivationBatch, LayeredClassifier};
use crate::numerics::Matrix;
use crate::sae::{ablate, SaeModel};

/// Treatment of the SAE reconstruction residual of the unlearned activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorTerm {
    /// Feed the pure decoded activation.
    #[default]
    Drop,
    /// Add back `h_unl − decode(encode(h_unl))`.
    Preserve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    pub alpha: f64,
    pub layer: usize,
    pub experts: ExpertFeatureSet,
    pub matching: FeatureMatching,
    pub error_term: ErrorTerm,
}

impl SteeringConfig {
    fn validate(&self, sae_orig: &SaeModel, sae_unl: &SaeModel) -> Result<()> {
        if !self.alpha.is_finite() {
            return config_err("steering alpha must be finite");
        }
        if sae_orig.layer() != self.layer || sae_unl.layer() != self.layer {
            return config_err(format!(
                "steering layer {} but SAEs were trained on layers {} and {}",
                self.layer,
                sae_orig.layer(),
                sae_unl.layer()
            ));
        }
        if sae_orig.m() != sae_unl.m() {
            return config_err("SAEs have different latent counts");
        }
        if self.matching.permutation.len() != sae_orig.m() || !self.matching.is_bijection() {
            return config_err("matching is not a bijection over the SAE latents");
        }
        if self.experts.indices.iter().any(|&j| j >= sae_orig.m()) {
            return config_err("expert index out of range");
        }
        Ok(())
    }
}

/// Applies the restoration blend to every row; non-expert entries are copied bitwise.
pub fn steer_codes(
    c_orig: &Matrix,
    c_unl: &Matrix,
    experts: &[usize],
    matching: &FeatureMatching,
    alpha: f64,
) -> Result<Matrix> {
    if c_orig.shape() != c_unl.shape() {
        return input_err("original and unlearned codes differ in shape");
    }
    let mut out = c_unl.clone();
    for i in 0..out.rows() {
        let orig = c_orig.row(i);
        let row = out.row_mut(i);
        for &j in experts {
            let t = matching.map(j);
            row[t] += alpha * (orig[j] - row[t]);
        }
    }
    Ok(out)
}

/// Activations entering the unlearned model's tail for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeredActivations {
    /// `decode(encode(h_unl))`, optionally plus the residual.
    pub passthrough: ActivationBatch,
    pub steered: ActivationBatch,
}

pub fn steered_activations(
    orig: &LayeredClassifier,
    unl: &LayeredClassifier,
    sae_orig: &SaeModel,
    sae_unl: &SaeModel,
    steering: &SteeringConfig,
    x: &Matrix,
) -> Result<SteeredActivations> {
    steering.validate(sae_orig, sae_unl)?;
    let h_orig = orig.capture(x, steering.layer)?;
    let h_unl = unl.capture(x, steering.layer)?;
    let c_orig = sae_orig.encode(&h_orig)?;
    let c_unl = sae_unl.encode(&h_unl)?;
    let c_hat = steer_codes(
        &c_orig.values,
        &c_unl.values,
        &steering.experts.indices,
        &steering.matching,
        steering.alpha,
    )?;
    let mut pass = sae_unl.decode_values(&c_unl.values)?;
    let mut steered = sae_unl.decode_values(&c_hat)?;
    if steering.error_term == ErrorTerm::Preserve {
        let residual = h_unl.values.sub(&pass)?;
        pass = pass.add(&residual)?;
        steered = steered.add(&residual)?;
    }
    Ok(SteeredActivations {
        passthrough: ActivationBatch {
            layer: steering.layer,
            values: pass,
        },
        steered: ActivationBatch {
            layer: steering.layer,
            values: steered,
        },
    })
}

/// Accuracy of one sample group before and after intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionAccuracy {
    /// Raw forward pass of the unlearned model.
    pub unlearned: f64,
    /// Unlearned model with its activation replaced by the SAE reconstruction.
    pub passthrough: f64,
    /// Unlearned model with the steered reconstruction.
    pub restored: f64,
}

/// Restoration outcome at one layer on one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Restoration {
    pub layer: usize,
    /// Forget-class samples scored as "predicted the forget class".
    pub forget: InterventionAccuracy,
    /// Retain-class samples scored against their own labels.
    pub retain: InterventionAccuracy,
}

fn hit_rate(pred: &[usize], labels: &[usize], pick: impl Fn(usize) -> bool) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for (&p, &y) in pred.iter().zip(labels) {
        if pick(y) {
            n += 1;
            if p == y {
                hits += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Runs selective restoration on `eval` and scores forget and retain samples separately.
pub fn restore(
    orig: &LayeredClassifier,
    unl: &LayeredClassifier,
    sae_orig: &SaeModel,
    sae_unl: &SaeModel,
    steering: &SteeringConfig,
    eval: &Dataset,
) -> Result<Restoration> {
    let c = steering.experts.class;
    if c >= eval.num_classes {
        return input_err("expert class outside the evaluation labels");
    }
    let acts = steered_activations(orig, unl, sae_orig, sae_unl, steering, &eval.inputs)?;
    let raw = unl.predict(&eval.inputs)?;
    let pass = unl.forward_from(&acts.passthrough)?.argmax_rows();
    let steered = unl.forward_from(&acts.steered)?.argmax_rows();
    let labels = &eval.labels;
    let score = |pred: &[usize], forget: bool| hit_rate(pred, labels, |y| (y == c) == forget);
    Ok(Restoration {
        layer: steering.layer,
        forget: InterventionAccuracy {
            unlearned: score(&raw, true),
            passthrough: score(&pass, true),
            restored: score(&steered, true),
        },
        retain: InterventionAccuracy {
            unlearned: score(&raw, false),
            passthrough: score(&pass, false),
            restored: score(&steered, false),
        },
    })
}

/// Effect of zeroing a class's experts, relative to plain SAE passthrough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub layer: usize,
    pub class: usize,
    pub baseline_class_accuracy: Vec<f64>,
    pub ablated_class_accuracy: Vec<f64>,
    /// Points lost on the expert class (positive = accuracy fell).
    pub forget_drop: f64,
    /// Largest absolute change in points over the other classes.
    pub retain_drift: f64,
}

/// Ablates `experts` in the SAE code of `model` at `layer` and measures per-class accuracy change.
pub fn validate_experts(
    model: &LayeredClassifier,
    sae: &SaeModel,
    experts: &ExpertFeatureSet,
    eval: &Dataset,
    layer: usize,
) -> Result<AblationOutcome> {
    if sae.layer() != layer {
        return config_err(format!(
            "SAE trained on layer {} used at layer {layer}",
            sae.layer()
        ));
    }
    let h = model.capture(&eval.inputs, layer)?;
    let code = sae.encode(&h)?;
    let ablated = ablate(&code, &experts.indices)?;
    let base_pred = model.forward_from(&sae.decode(&code)?)?.argmax_rows();
    let abl_pred = model.forward_from(&sae.decode(&ablated)?)?.argmax_rows();
    let per_class = |pred: &[usize]| -> Vec<f64> {
        (0..eval.num_classes)
            .map(|k| hit_rate(pred, &eval.labels, |y| y == k))
            .collect()
    };
    let baseline = per_class(&base_pred);
    let after = per_class(&abl_pred);
    let c = experts.class;
    let forget_drop = (baseline[c] - after[c]) * 100.0;
    let retain_drift = (0..eval.num_classes)
        .filter(|&k| k != c)
        .map(|k| ((after[k] - baseline[k]) * 100.0).abs())
        .fold(0.0, f64::max);
    Ok(AblationOutcome {
        layer,
        class: c,
        baseline_class_accuracy: baseline,
        ablated_class_accuracy: after,
        forget_drop,
        retain_drift,
    })
}
