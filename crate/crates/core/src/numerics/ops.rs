// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{input_err, shape_err, Result};
use crate::numerics::Matrix;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// The gradient is `(softmax - onehot) / batch`. Rows are stabilized by
/// subtracting their maximum before exponentiation.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return shape_err(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        ));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return input_err(format!("label {bad} out of range for {classes} classes"));
    }
    let batch = labels.len().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - max).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[y] - max);
        let g = grad.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            g[j] = (z - max).exp() / denom / batch;
        }
        g[y] -= 1.0 / batch;
    }
    Ok((loss / batch, grad))
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            denom += *z;
        }
        for z in row.iter_mut() {
            *z /= denom;
        }
    }
    out
}

/// Indices of the `k` largest entries, largest first; equal values keep the lower index first.
pub fn topk_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > v.len() {
        return input_err(format!("k = {k} exceeds length {}", v.len()));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps ascending index order among equal values.
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx.truncate(k);
    Ok(idx)
}

/// Keeps the `k` largest entries of `v` and zeroes the rest.
pub fn topk_mask(v: &[f64], k: usize) -> Result<Vec<f64>> {
    let keep = topk_indices(v, k)?;
    let mut out = vec![0.0; v.len()];
    for i in keep {
        out[i] = v[i];
    }
    Ok(out)
}

/// In-place TopK over a row for the hot SAE path. `scratch` is reused across rows.
pub(crate) fn topk_mask_in_place(row: &mut [f64], k: usize, scratch: &mut Vec<usize>) {
    if k >= row.len() {
        return;
    }
    scratch.clear();
    scratch.extend(0..row.len());
    let cmp = |&a: &usize, &b: &usize| row[b].total_cmp(&row[a]).then(a.cmp(&b));
    if k > 0 {
        scratch.select_nth_unstable_by(k - 1, cmp);
    }
    for &i in &scratch[k..] {
        row[i] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Matrix::zeros(3, 5);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_approach_zero_loss() {
        let mut logits = Matrix::zeros(1, 4);
        logits.set(0, 1, 60.0);
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Matrix::from_rows(&[vec![1e4, -1e4, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.is_finite() && grad.is_finite());
        assert!((loss - 1e4).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(crate::AuditError::Input(_))
        ));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 1]),
            Err(crate::AuditError::Shape(_))
        ));
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_mask(&[3.0, 1.0, 2.0], 2).unwrap(), vec![3.0, 0.0, 2.0]);
        assert_eq!(topk_mask(&[3.0, 1.0, 2.0], 3).unwrap(), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            topk_mask(&[1.0, 1.0, 1.0, 0.0], 2).unwrap(),
            vec![1.0, 1.0, 0.0, 0.0]
        );
        assert!(topk_mask(&[1.0], 2).is_err());
    }

    #[test]
    fn in_place_matches_reference() {
        let v = [0.5, 2.0, 2.0, -1.0, 2.0, 0.0, 3.0];
        let mut scratch = Vec::new();
        for k in 0..=v.len() {
            let mut row = v.to_vec();
            topk_mask_in_place(&mut row, k, &mut scratch);
            assert_eq!(row, topk_mask(&v, k).unwrap(), "k = {k}");
        }
    }
}
