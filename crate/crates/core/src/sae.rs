// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK sparse autoencoder over captured layer activations.
//!
//! ```text
//! encode:  code = TopK(relu(x · W_enc + b_enc), K)
//! decode:  x̂    = code · W_dec + b_dec
//! ```
//!
//! `W_enc` is `d × m`, `W_dec` is `m × d` with unit-norm rows, and `m > d`.
//! Training minimizes the reconstruction error normalized by the data
//! variance, passing gradients straight through the TopK mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{ArtifactKind, Container};
use crate::error::{config_err, input_err, shape_err, AuditError, Result};
use crate::model::ActivationBatch;
use crate::numerics::{topk_mask_in_place, Matrix, OptimizerState, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeConfig {
    /// Activation width.
    pub d: usize,
    /// Number of latents.
    pub m: usize,
    /// Active latents per sample.
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            d: 64,
            m: 128,
            k: 2,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m <= self.d {
            return config_err(format!(
                "SAE must be overcomplete: m = {} must exceed d = {}",
                self.m, self.d
            ));
        }
        if self.k == 0 || self.k > self.m {
            return config_err(format!("TopK K = {} must lie in 1..={}", self.k, self.m));
        }
        if self.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        OptimizerState::momentum(self.lr, self.momentum).map(|_| ())
    }
}

/// Which model and layer an SAE was fitted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub model_id: String,
    pub layer: usize,
}

/// Codes with at most `K` strictly positive entries per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub values: Matrix,
}

impl SparseCode {
    /// Wraps `values`, checking the sparsity and sign invariants.
    pub fn new(values: Matrix, k: usize) -> Result<Self> {
        for (i, row) in values.row_iter().enumerate() {
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return input_err(format!("code row {i} has a negative or non-finite entry"));
            }
            let nz = row.iter().filter(|&&v| v > 0.0).count();
            if nz > k {
                return input_err(format!("code row {i} has {nz} nonzeros, K = {k}"));
            }
        }
        Ok(Self { values })
    }

    pub fn nonzeros_per_row(&self) -> Vec<usize> {
        self.values
            .row_iter()
            .map(|r| r.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}

/// Gradients of the reconstruction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    pub encoder: Matrix,
    pub enc_bias: Matrix,
    pub decoder: Matrix,
    pub dec_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub encoder: Matrix,
    pub enc_bias: Matrix,
    pub decoder: Matrix,
    pub dec_bias: Matrix,
    pub config: SaeConfig,
    pub trained_on: TrainedOn,
    /// Normalized reconstruction error before training.
    pub initial_loss: f64,
    /// Normalized reconstruction error after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SaeHeader {
    config: SaeConfig,
    trained_on: TrainedOn,
}

impl SaeModel {
    /// Untrained SAE: random unit decoder rows, encoder tied to the decoder
    /// transpose, decoder bias at `mean`, encoder bias centering on it.
    pub fn init(config: &SaeConfig, mean: &[f64], trained_on: TrainedOn) -> Result<Self> {
        config.validate()?;
        if mean.len() != config.d {
            return shape_err("mean length differs from d");
        }
        let mut rng = Rng::new(config.seed);
        let mut decoder = Matrix::from_fn(config.m, config.d, |_, _| rng.normal());
        normalize_rows(&mut decoder);
        let encoder = decoder.transpose();
        let dec_bias = Matrix::row_vector(mean.to_vec());
        let enc_bias = Matrix::row_vector(
            dec_bias
                .matmul(&encoder)?
                .data()
                .iter()
                .map(|v| -v)
                .collect(),
        );
        Ok(Self {
            encoder,
            enc_bias,
            decoder,
            dec_bias,
            config: config.clone(),
            trained_on,
            initial_loss: f64::NAN,
            loss_history: Vec::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn layer(&self) -> usize {
        self.trained_on.layer
    }

    fn check_batch(&self, acts: &ActivationBatch) -> Result<()> {
        if acts.layer != self.trained_on.layer {
            return config_err(format!(
                "activations from layer {} but SAE was trained on layer {}",
                acts.layer, self.trained_on.layer
            ));
        }
        if acts.values.cols() != self.d() {
            return shape_err(format!(
                "activation width {} but SAE expects {}",
                acts.values.cols(),
                self.d()
            ));
        }
        Ok(())
    }

    /// `TopK(relu(x · W_enc + b_enc))` on raw rows.
    pub fn encode_values(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d() {
            return shape_err("encode width mismatch");
        }
        let mut pre = x.matmul(&self.encoder)?;
        pre.add_row_vector(self.enc_bias.data())?;
        let mut scratch = Vec::with_capacity(self.m());
        for i in 0..pre.rows() {
            let row = pre.row_mut(i);
            row.iter_mut().for_each(|v| *v = v.max(0.0));
            topk_mask_in_place(row, self.k(), &mut scratch);
        }
        Ok(pre)
    }

    pub fn encode(&self, acts: &ActivationBatch) -> Result<SparseCode> {
        self.check_batch(acts)?;
        Ok(SparseCode {
            values: self.encode_values(&acts.values)?,
        })
    }

    /// `code · W_dec + b_dec` for any code matrix, sparse or steered.
    pub fn decode_values(&self, code: &Matrix) -> Result<Matrix> {
        if code.cols() != self.m() {
            return shape_err(format!(
                "code width {} but SAE has {} latents",
                code.cols(),
                self.m()
            ));
        }
        let mut out = code.matmul(&self.decoder)?;
        out.add_row_vector(self.dec_bias.data())?;
        Ok(out)
    }

    pub fn decode(&self, code: &SparseCode) -> Result<ActivationBatch> {
        Ok(ActivationBatch {
            layer: self.layer(),
            values: self.decode_values(&code.values)?,
        })
    }

    /// Mean over rows of squared reconstruction error divided by `norm`,
    /// with straight-through gradients through the TopK/relu mask.
    pub fn loss_and_grads(&self, x: &Matrix, norm: f64) -> Result<(f64, SaeGradients)> {
        let code = self.encode_values(x)?;
        let (b, d, m) = (x.rows(), self.d(), self.m());
        let scale = 1.0 / (b.max(1) as f64 * norm);
        let mut dec = Matrix::zeros(m, d);
        let mut enc = Matrix::zeros(d, m);
        let mut dec_b = vec![0.0; d];
        let mut enc_b = vec![0.0; m];
        let mut loss = 0.0;
        let mut err = vec![0.0; d];
        let mut active: Vec<usize> = Vec::with_capacity(self.k());
        for i in 0..b {
            let c = code.row(i);
            active.clear();
            active.extend((0..m).filter(|&j| c[j] > 0.0));
            err.copy_from_slice(self.dec_bias.data());
            for &j in &active {
                for (e, &w) in err.iter_mut().zip(self.decoder.row(j)) {
                    *e += c[j] * w;
                }
            }
            for (e, &xi) in err.iter_mut().zip(x.row(i)) {
                *e -= xi;
                loss += *e * *e;
            }
            // d(loss)/d(recon) = 2 * err * scale
            err.iter_mut().for_each(|e| *e *= 2.0 * scale);
            for (acc, &g) in dec_b.iter_mut().zip(&err) {
                *acc += g;
            }
            for &j in &active {
                let dcode: f64 = self
                    .decoder
                    .row(j)
                    .iter()
                    .zip(&err)
                    .map(|(w, g)| w * g)
                    .sum();
                for (acc, &g) in dec.row_mut(j).iter_mut().zip(&err) {
                    *acc += c[j] * g;
                }
                enc_b[j] += dcode;
                for (r, &xi) in x.row(i).iter().enumerate() {
                    enc.data_mut()[r * m + j] += xi * dcode;
                }
            }
        }
        Ok((
            loss * scale,
            SaeGradients {
                encoder: enc,
                enc_bias: Matrix::row_vector(enc_b),
                decoder: dec,
                dec_bias: Matrix::row_vector(dec_b),
            },
        ))
    }

    /// Squared reconstruction error divided by total variance (fraction of variance unexplained).
    pub fn normalized_error(&self, x: &Matrix) -> Result<f64> {
        let recon = self.decode_values(&self.encode_values(x)?)?;
        let var = total_variance(x);
        Ok(recon.sub(x)?.frobenius_sq() / x.rows().max(1) as f64 / var)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = SaeHeader {
            config: self.config.clone(),
            trained_on: self.trained_on.clone(),
        };
        let mut c = Container::new(ArtifactKind::Sae, serde_json::to_string(&header)?);
        c.push_f64("encoder", self.encoder.clone());
        c.push_f64("enc_bias", self.enc_bias.clone());
        c.push_f64("decoder", self.decoder.clone());
        c.push_f64("dec_bias", self.dec_bias.clone());
        c.push_f64("initial_loss", Matrix::row_vector(vec![self.initial_loss]));
        c.push_f64(
            "loss_history",
            Matrix::row_vector(self.loss_history.clone()),
        );
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(ArtifactKind::Sae)?;
        let header: SaeHeader = serde_json::from_str(&c.meta)
            .map_err(|e| AuditError::Format(format!("sae metadata: {e}")))?;
        let cfg = header.config;
        cfg.validate()
            .map_err(|e| AuditError::Format(e.to_string()))?;
        let get = |name: &str, shape: (usize, usize)| -> Result<Matrix> {
            let m = c.matrix(name)?;
            if m.shape() != shape {
                return Err(AuditError::Format(format!(
                    "section {name} has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(AuditError::Format(format!("section {name} is not finite")));
            }
            Ok(m.clone())
        };
        let initial = c.matrix("initial_loss")?;
        if initial.shape() != (1, 1) {
            return Err(AuditError::Format("initial_loss must be 1x1".into()));
        }
        let history = c.matrix("loss_history")?;
        if history.rows() != 1 {
            return Err(AuditError::Format("loss_history must be a row".into()));
        }
        Ok(Self {
            encoder: get("encoder", (cfg.d, cfg.m))?,
            enc_bias: get("enc_bias", (1, cfg.m))?,
            decoder: get("decoder", (cfg.m, cfg.d))?,
            dec_bias: get("dec_bias", (1, cfg.d))?,
            initial_loss: initial.data()[0],
            loss_history: history.data().to_vec(),
            config: cfg,
            trained_on: header.trained_on,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn normalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Mean squared distance of rows from their column means.
fn total_variance(x: &Matrix) -> f64 {
    let mean = x.column_means();
    let n = x.rows().max(1) as f64;
    let ss: f64 = x
        .row_iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    (ss / n).max(f64::MIN_POSITIVE)
}

/// Re-points dead latents at the worst-reconstructed samples.
fn resample_dead(
    sae: &mut SaeModel,
    x: &Matrix,
    dead: &[usize],
    opt: &mut OptimizerState,
) -> Result<()> {
    let recon = sae.decode_values(&sae.encode_values(x)?)?;
    let mut errors: Vec<(usize, f64)> = (0..x.rows())
        .map(|i| {
            let e: f64 = recon
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            (i, e)
        })
        .collect();
    errors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let m = sae.m();
    for (&j, &(i, _)) in dead.iter().zip(errors.iter().cycle()) {
        let mut dir: Vec<f64> = x
            .row(i)
            .iter()
            .zip(recon.row(i))
            .map(|(a, b)| a - b)
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            continue;
        }
        dir.iter_mut().for_each(|v| *v /= norm);
        sae.decoder.row_mut(j).copy_from_slice(&dir);
        let mut bias = 0.0;
        for (r, (&v, &b)) in dir.iter().zip(sae.dec_bias.data()).enumerate() {
            sae.encoder.data_mut()[r * m + j] = v;
            bias -= v * b;
        }
        sae.enc_bias.data_mut()[j] = bias;
        // Velocity order matches the parameter order used in `train_sae`.
        let vel = opt.velocity_mut();
        if vel.len() == 4 {
            for r in 0..sae.d() {
                vel[0].data_mut()[r * m + j] = 0.0;
            }
            vel[1].data_mut()[j] = 0.0;
            vel[2].row_mut(j).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(())
}

/// Fits a TopK SAE to `acts`.
///
/// Latents that never fire during an epoch in the first half of training
/// are re-pointed at high-error inputs. Decoder rows are renormalized to
/// unit length after every step.
pub fn train_sae(acts: &ActivationBatch, config: &SaeConfig, model_id: &str) -> Result<SaeModel> {
    config.validate()?;
    let x = &acts.values;
    if x.cols() != config.d {
        return shape_err(format!(
            "activations have width {} but config.d = {}",
            x.cols(),
            config.d
        ));
    }
    if x.rows() == 0 {
        return input_err("no activations to train on");
    }
    if x.rows() < 10 * config.m {
        tracing::warn!(
            samples = x.rows(),
            latents = config.m,
            "fewer than 10 samples per latent; SAE features may be unreliable"
        );
    }
    let trained_on = TrainedOn {
        model_id: model_id.to_owned(),
        layer: acts.layer,
    };
    let sae = SaeModel::init(config, &x.column_means(), trained_on)?;
    fit_sae(sae, x, config, true)
}

/// Continues training from `init`'s parameters on new activations.
///
/// Latent `j` starts where `init`'s latent `j` ended. Dead latents are not
/// resampled, so a feature the new activations no longer use keeps its
/// decoder direction instead of being repurposed.
pub fn train_sae_from(
    init: &SaeModel,
    acts: &ActivationBatch,
    config: &SaeConfig,
    model_id: &str,
) -> Result<SaeModel> {
    config.validate()?;
    if init.d() != config.d || init.m() != config.m || init.k() != config.k {
        return config_err("warm-start SAE does not match the SAE config");
    }
    if acts.values.cols() != config.d || acts.values.rows() == 0 {
        return shape_err("activations do not match the warm-start SAE");
    }
    let mut sae = init.clone();
    sae.config = config.clone();
    sae.trained_on = TrainedOn {
        model_id: model_id.to_owned(),
        layer: acts.layer,
    };
    sae.loss_history.clear();
    fit_sae(sae, &acts.values, config, false)
}

fn fit_sae(mut sae: SaeModel, x: &Matrix, config: &SaeConfig, resample: bool) -> Result<SaeModel> {
    let var = total_variance(x);
    sae.initial_loss = sae.normalized_error(x)?;
    let mut opt = OptimizerState::momentum(config.lr, config.momentum)?;
    let mut rng = Rng::new(config.seed).fork("batches");
    for epoch in 0..config.epochs {
        let batches = crate::model::epoch_batches(x.rows(), config.batch_size, &mut rng);
        for (step, idx) in batches.iter().enumerate() {
            let xb = x.select_rows(idx)?;
            let (loss, g) = sae.loss_and_grads(&xb, var)?;
            if !loss.is_finite() {
                return Err(crate::model::diverged(epoch, step, loss));
            }
            opt.step(
                &mut [
                    &mut sae.encoder,
                    &mut sae.enc_bias,
                    &mut sae.decoder,
                    &mut sae.dec_bias,
                ],
                &[&g.encoder, &g.enc_bias, &g.decoder, &g.dec_bias],
            )?;
            normalize_rows(&mut sae.decoder);
        }
        let codes = sae.encode_values(x)?;
        let recon = sae.decode_values(&codes)?;
        let loss = recon.sub(x)?.frobenius_sq() / x.rows() as f64 / var;
        if !loss.is_finite() {
            return Err(crate::model::diverged(epoch, batches.len(), loss));
        }
        sae.loss_history.push(loss);
        if resample && epoch < config.epochs / 2 {
            let mut fired = vec![false; config.m];
            for row in codes.row_iter() {
                for (f, &v) in fired.iter_mut().zip(row) {
                    *f |= v > 0.0;
                }
            }
            let dead: Vec<usize> = (0..config.m).filter(|&j| !fired[j]).collect();
            if !dead.is_empty() {
                tracing::debug!(epoch, dead = dead.len(), "resampling dead latents");
                resample_dead(&mut sae, x, &dead, &mut opt)?;
            }
        }
    }
    Ok(sae)
}

/// Zeroes the listed latents in every row.
pub fn ablate(code: &SparseCode, features: &[usize]) -> Result<SparseCode> {
    let m = code.values.cols();
    if let Some(&bad) = features.iter().find(|&&j| j >= m) {
        return input_err(format!("feature {bad} out of range for {m} latents"));
    }
    let mut values = code.values.clone();
    for i in 0..values.rows() {
        let row = values.row_mut(i);
        for &j in features {
            row[j] = 0.0;
        }
    }
    Ok(SparseCode { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(layer: usize, x: Matrix) -> ActivationBatch {
        ActivationBatch { layer, values: x }
    }

    fn hand_sae() -> SaeModel {
        let cfg = SaeConfig {
            d: 2,
            m: 3,
            k: 2,
            ..SaeConfig::default()
        };
        let mut sae = SaeModel::init(
            &cfg,
            &[0.0, 0.0],
            TrainedOn {
                model_id: "t".into(),
                layer: 1,
            },
        )
        .unwrap();
        sae.encoder = Matrix::from_rows(&[vec![1.0, -1.0, 0.5], vec![2.0, 1.0, -0.5]]).unwrap();
        sae.enc_bias = Matrix::row_vector(vec![0.0, 0.5, -1.0]);
        sae.decoder = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        sae.dec_bias = Matrix::row_vector(vec![0.1, -0.1]);
        sae
    }

    #[test]
    fn hand_encode_and_decode() {
        let sae = hand_sae();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-2.0, 1.0]]).unwrap();
        // Row 0 pre: [3, 0.5, -1] -> relu [3, 0.5, 0] -> top2 keeps both.
        // Row 1 pre: [0, 3.5, -3] -> relu [0, 3.5, 0] -> top2 [0, 3.5, 0].
        let code = sae.encode(&batch(1, x)).unwrap();
        assert_eq!(code.values.row(0), &[3.0, 0.5, 0.0]);
        assert_eq!(code.values.row(1), &[0.0, 3.5, 0.0]);
        let recon = sae.decode(&code).unwrap();
        let want = Matrix::from_rows(&[vec![3.1, 0.4], vec![0.1, 3.4]]).unwrap();
        assert!(recon.values.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn topk_limits_active_latents() {
        let mut sae = hand_sae();
        sae.config.k = 1;
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let code = sae.encode(&batch(1, x)).unwrap();
        assert_eq!(code.values.row(0), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_mismatch_is_config_error() {
        let sae = hand_sae();
        let x = Matrix::zeros(1, 2);
        assert!(matches!(
            sae.encode(&batch(2, x)),
            Err(AuditError::Config(_))
        ));
    }

    #[test]
    fn zero_code_decodes_to_bias() {
        let sae = hand_sae();
        let out = sae.decode_values(&Matrix::zeros(2, 3)).unwrap();
        for row in out.row_iter() {
            assert_eq!(row, &[0.1, -0.1]);
        }
    }

    #[test]
    fn decode_is_affine() {
        let sae = hand_sae();
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.5, 3.0, 0.0]]).unwrap();
        let lhs = sae.decode_values(&a.add(&b).unwrap()).unwrap();
        let rhs = sae
            .decode_values(&a)
            .unwrap()
            .add(&sae.decode_values(&b).unwrap())
            .unwrap()
            .sub(&Matrix::row_vector(sae.dec_bias.data().to_vec()))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn ablation_cases() {
        let code = SparseCode::new(
            Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 4.0]]).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(ablate(&code, &[]).unwrap(), code);
        let all = ablate(&code, &[0, 1, 2]).unwrap();
        assert!(all.values.data().iter().all(|&v| v == 0.0));
        let some = ablate(&code, &[2]).unwrap();
        assert_eq!(some.values.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(some.values.row(1), &[0.0, 3.0, 0.0]);
        assert!(ablate(&code, &[3]).is_err());
    }

    #[test]
    fn sparse_code_invariants_checked() {
        assert!(SparseCode::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), 1).is_err());
        assert!(SparseCode::new(Matrix::from_rows(&[vec![-1.0, 0.0]]).unwrap(), 1).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = SaeConfig {
            d: 8,
            m: 8,
            ..SaeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SaeConfig {
            k: 0,
            ..SaeConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let mut sae = hand_sae();
        sae.initial_loss = 0.75;
        sae.loss_history = vec![0.5, 0.25];
        let back = SaeModel::from_bytes(&sae.to_bytes().unwrap()).unwrap();
        assert_eq!(back, sae);
    }
}
