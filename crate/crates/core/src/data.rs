// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic multi-class data, forget/retain splits and dataset files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{ArtifactKind, Container};
use crate::error::{config_err, input_err, AuditError, Result};
use crate::numerics::{dot, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labeled samples, one row of `inputs` per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return input_err(format!(
                "{} input rows for {} labels",
                inputs.rows(),
                labels.len()
            ));
        }
        if num_classes == 0 {
            return input_err("num_classes must be positive");
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return input_err(format!(
                "label {bad} out of range for {num_classes} classes"
            ));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows whose label satisfies `keep`, in original order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.subset(&idx)
    }

    /// Gathers the given rows. Indices must be in range.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self
                .inputs
                .select_rows(idx)
                .expect("subset indices in range"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&DatasetMeta {
            num_classes: self.num_classes,
            split: self.split,
        })?;
        let mut c = Container::new(ArtifactKind::Dataset, meta);
        c.push_f64("inputs", self.inputs.clone());
        c.push_u32(
            "labels",
            self.labels
                .iter()
                .map(|&y| u32::try_from(y).expect("label fits u32"))
                .collect(),
        );
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(ArtifactKind::Dataset)?;
        let meta: DatasetMeta = serde_json::from_str(&c.meta)
            .map_err(|e| AuditError::Format(format!("dataset metadata: {e}")))?;
        let inputs = c.matrix("inputs")?.clone();
        if !inputs.is_finite() {
            return Err(AuditError::Format("non-finite dataset inputs".into()));
        }
        let labels = c.u32s("labels")?.iter().map(|&y| y as usize).collect();
        Dataset::new(inputs, labels, meta.num_classes, meta.split)
            .map_err(|e| AuditError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Parameters of the synthetic Gaussian-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub d_in: usize,
    pub class_separation: f64,
    pub intra_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 500,
            d_in: 32,
            class_separation: 6.0,
            intra_noise: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return config_err("need at least two classes");
        }
        if self.d_in < self.num_classes {
            return config_err(format!(
                "cannot place {} equidistant class means in {} dimensions",
                self.num_classes, self.d_in
            ));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return config_err("class_separation must be positive");
        }
        if !(self.intra_noise.is_finite() && self.intra_noise > 0.0) {
            return config_err("intra_noise must be positive");
        }
        if self.samples_per_class < 2 {
            return config_err("need at least two samples per class for a train/test split");
        }
        Ok(())
    }
}

/// Samples per class held out for the test split.
fn test_count(samples_per_class: usize) -> usize {
    (samples_per_class / 5).max(1)
}

/// Draws `count` orthonormal vectors of length `dim` (Gram–Schmidt on Gaussian draws).
fn orthonormal_frame(dim: usize, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        // Two passes of projection keep the frame orthogonal to machine precision.
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

/// Generates stratified train and test splits of the synthetic task.
///
/// Class means sit on a scaled random orthonormal frame, so every pair of
/// means is `class_separation` apart. Each class has its own random
/// rotation and per-axis scales in `[0.5, 1.5] * intra_noise`.
pub fn generate_synthetic(cfg: &SyntheticConfig, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let d = cfg.d_in;
    // sqrt(2) * scale = separation; the tiny excess absorbs rounding.
    let scale = cfg.class_separation / std::f64::consts::SQRT_2 * (1.0 + 1e-12);
    let means: Vec<Vec<f64>> = orthonormal_frame(d, cfg.num_classes, rng)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect();

    let n_test = test_count(cfg.samples_per_class);
    let n_train = cfg.samples_per_class - n_test;
    let mut train_rows = Vec::with_capacity(cfg.num_classes * n_train);
    let mut test_rows = Vec::with_capacity(cfg.num_classes * n_test);
    for (class, mean) in means.iter().enumerate() {
        let axes = orthonormal_frame(d, d, rng);
        let scales: Vec<f64> = (0..d)
            .map(|_| rng.uniform(0.5, 1.5) * cfg.intra_noise)
            .collect();
        for s in 0..cfg.samples_per_class {
            let mut x = mean.clone();
            for (axis, &sc) in axes.iter().zip(&scales) {
                let z = rng.normal() * sc;
                for (xi, ai) in x.iter_mut().zip(axis) {
                    *xi += z * ai;
                }
            }
            if s < n_train {
                train_rows.push((x, class));
            } else {
                test_rows.push((x, class));
            }
        }
    }
    rng.shuffle(&mut train_rows);
    rng.shuffle(&mut test_rows);
    let build = |rows: Vec<(Vec<f64>, usize)>, split| -> Result<Dataset> {
        let labels = rows.iter().map(|(_, y)| *y).collect();
        let inputs: Vec<Vec<f64>> = rows.into_iter().map(|(x, _)| x).collect();
        Dataset::new(Matrix::from_rows(&inputs)?, labels, cfg.num_classes, split)
    };
    Ok((
        build(train_rows, Split::Train)?,
        build(test_rows, Split::Test)?,
    ))
}

/// Partition of a dataset into the forgotten class and everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetRetainSplit {
    pub forget_class: usize,
    pub forget: Dataset,
    pub retain: Dataset,
}

pub fn split_forget_retain(ds: &Dataset, forget_class: usize) -> Result<ForgetRetainSplit> {
    if forget_class >= ds.num_classes || !ds.labels.contains(&forget_class) {
        return input_err(format!("forget class {forget_class} has no samples"));
    }
    Ok(ForgetRetainSplit {
        forget_class,
        forget: ds.filter(|y| y == forget_class),
        retain: ds.filter(|y| y != forget_class),
    })
}
