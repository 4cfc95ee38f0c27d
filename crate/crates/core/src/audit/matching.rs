// SPDX-License-Identifier: MIT OR Apache-2.0

//! Alignment of latent indices between two SAEs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::hungarian::solve_assignment;
use crate::error::{config_err, input_err, Result};
use crate::model::ActivationBatch;
use crate::numerics::Matrix;
use crate::sae::SaeModel;

/// Pairwise dissimilarity used to align latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchCost {
    /// `1 − cos(decoder row i, decoder row j)`.
    DecoderCosine,
    /// `1 − Pearson(code column i, code column j)` on a shared probe batch.
    ActivationCorrelation,
    /// No alignment; used when both sides share one SAE.
    Identity,
}

/// Bijection from original-SAE latents to unlearned-SAE latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatching {
    pub permutation: Vec<usize>,
    pub cost_kind: MatchCost,
    pub cost_matrix_digest: String,
    pub total_cost: f64,
}

impl FeatureMatching {
    pub fn identity(m: usize) -> Self {
        Self {
            permutation: (0..m).collect(),
            cost_kind: MatchCost::Identity,
            cost_matrix_digest: String::new(),
            total_cost: 0.0,
        }
    }

    /// Image of original latent `j`.
    pub fn map(&self, j: usize) -> usize {
        self.permutation[j]
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        for &p in &self.permutation {
            if p >= seen.len() || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        true
    }
}

pub fn digest_matrix(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for v in m.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `1 − cos` between rows of `a` and rows of `b`; zero rows have cosine 0.
pub fn cosine_cost(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let an = unit_rows(a);
    let bn = unit_rows(b);
    Ok(an.matmul_nt(&bn)?.map(|c| 1.0 - c))
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// `1 − Pearson` between columns of `a` and columns of `b`; constant columns correlate 0.
pub fn correlation_cost(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return input_err("probe batches must have the same number of samples");
    }
    let an = standardized_columns(a);
    let bn = standardized_columns(b);
    Ok(an.matmul_tn(&bn)?.map(|c| 1.0 - c))
}

/// Columns centered and scaled to unit norm, so their dot product is the correlation.
fn standardized_columns(m: &Matrix) -> Matrix {
    let mean = m.column_means();
    let mut out = m.clone();
    let mut norms = vec![0.0; m.cols()];
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v -= mean[j];
            norms[j] += *v * *v;
        }
    }
    let norms: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = if norms[j] > 1e-12 { *v / norms[j] } else { 0.0 };
        }
    }
    out
}

/// Aligns latents of `sae_orig` to latents of `sae_unl` by exact minimum-cost assignment.
///
/// `probe` holds the same inputs captured from the original and the
/// unlearned model; it is required for [`MatchCost::ActivationCorrelation`].
pub fn match_features(
    sae_orig: &SaeModel,
    sae_unl: &SaeModel,
    cost_kind: MatchCost,
    probe: Option<(&ActivationBatch, &ActivationBatch)>,
) -> Result<FeatureMatching> {
    if sae_orig.m() != sae_unl.m() || sae_orig.d() != sae_unl.d() {
        return input_err(format!(
            "SAE sizes differ: m {} vs {}, d {} vs {}",
            sae_orig.m(),
            sae_unl.m(),
            sae_orig.d(),
            sae_unl.d()
        ));
    }
    let cost = match cost_kind {
        MatchCost::Identity => return Ok(FeatureMatching::identity(sae_orig.m())),
        MatchCost::DecoderCosine => cosine_cost(&sae_orig.decoder, &sae_unl.decoder)?,
        MatchCost::ActivationCorrelation => {
            let Some((po, pu)) = probe else {
                return config_err("activation-correlation matching needs a probe batch");
            };
            let co = sae_orig.encode(po)?;
            let cu = sae_unl.encode(pu)?;
            correlation_cost(&co.values, &cu.values)?
        }
    };
    let assignment = solve_assignment(&cost)?;
    Ok(FeatureMatching {
        permutation: assignment.row_to_col,
        cost_kind,
        cost_matrix_digest: digest_matrix(&cost),
        total_cost: assignment.total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_identical_rows_is_zero_cost() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        let c = cosine_cost(&a, &a).unwrap();
        assert!(c.get(0, 0).abs() < 1e-15 && c.get(1, 1).abs() < 1e-15);
        assert!((c.get(0, 1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn correlation_handles_constant_columns() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 6.0]]).unwrap();
        let c = correlation_cost(&a, &a).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!(c.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn bijection_check() {
        assert!(FeatureMatching::identity(4).is_bijection());
        let mut m = FeatureMatching::identity(3);
        m.permutation = vec![0, 0, 2];
        assert!(!m.is_bijection());
    }
}
