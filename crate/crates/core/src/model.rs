// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layered feedforward classifier with activation capture and splicing.
//!
//! Layers are numbered the way the audit refers to them: hidden layer `ℓ`
//! for `ℓ` in `1..=L` produces the activation captured at depth `ℓ`, and the
//! head maps the last hidden activation to logits. [`LayeredClassifier::forward_from`]
//! resumes the computation at layer `ℓ + 1` from an injected activation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{ArtifactKind, Container};
use crate::data::Dataset;
use crate::error::{config_err, input_err, shape_err, AuditError, Result};
use crate::numerics::{softmax_cross_entropy, Matrix, OptimizerState, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        if self == Activation::Relu {
            m.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
}

/// One affine layer `act(x·W + b)` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl Dense {
    fn he_init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::None => 1.0,
        };
        let std = (gain / fan_in as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.normal() * std),
            bias: Matrix::zeros(1, fan_out),
            activation,
        }
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weight)?;
        z.add_row_vector(self.bias.data())?;
        Ok(z)
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.pre_activation(x)?;
        self.activation.apply(&mut z);
        Ok(z)
    }
}

/// Layer sizes of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden: usize,
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dim: 64,
            num_hidden: 6,
            num_classes: 10,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_hidden == 0 {
            return config_err("architecture dimensions must be positive");
        }
        if self.num_classes < 2 {
            return config_err("need at least two classes");
        }
        Ok(())
    }

    fn layer_dims(&self, idx: usize) -> (usize, usize) {
        let fan_in = if idx == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        };
        let fan_out = if idx == self.num_hidden {
            self.num_classes
        } else {
            self.hidden_dim
        };
        (fan_in, fan_out)
    }
}

/// Post-nonlinearity activation of hidden layer `layer` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedActivation {
    pub layer: usize,
    pub values: Matrix,
}

/// Activations passed between the model and an SAE.
pub type ActivationBatch = CapturedActivation;

/// Gradient of one layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Per-layer gradients; `None` for layers below the first trainable one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
}

impl Gradients {
    /// `self += scale * other` on layers present in both.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                    *x += scale * y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += scale * y;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().for_each(|x| *x *= s);
            g.bias.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weight.is_finite() && g.bias.is_finite())
    }
}

/// Feedforward relu classifier: `num_hidden` hidden layers of equal width and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredClassifier {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl LayeredClassifier {
    /// He-initialized classifier; layers draw from `rng` in ascending order.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut m = Self::zeros(arch)?;
        for idx in 0..=arch.num_hidden {
            m.reinit_layer(idx, rng);
        }
        Ok(m)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = (0..=arch.num_hidden)
            .map(|idx| {
                let (fan_in, fan_out) = arch.layer_dims(idx);
                Dense {
                    weight: Matrix::zeros(fan_in, fan_out),
                    bias: Matrix::zeros(1, fan_out),
                    activation: if idx == arch.num_hidden {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Builds a classifier from explicit layers, checking that dimensions chain.
    pub fn from_layers(arch: Architecture, layers: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        if layers.len() != arch.num_hidden + 1 {
            return shape_err(format!(
                "expected {} layers, got {}",
                arch.num_hidden + 1,
                layers.len()
            ));
        }
        for (idx, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = arch.layer_dims(idx);
            if layer.weight.shape() != (fan_in, fan_out) || layer.bias.shape() != (1, fan_out) {
                return shape_err(format!("layer {idx} has wrong shape"));
            }
            let want = if idx == arch.num_hidden {
                Activation::None
            } else {
                Activation::Relu
            };
            if layer.activation != want {
                return shape_err(format!("layer {idx} has activation {:?}", layer.activation));
            }
        }
        Ok(Self { arch, layers })
    }

    /// Re-draws one layer (index `num_hidden` is the head) from `rng`.
    pub fn reinit_layer(&mut self, idx: usize, rng: &mut Rng) {
        let (fan_in, fan_out) = self.arch.layer_dims(idx);
        let activation = self.layers[idx].activation;
        self.layers[idx] = Dense::he_init(fan_in, fan_out, activation, rng);
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn num_hidden(&self) -> usize {
        self.arch.num_hidden
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.arch.input_dim {
            return shape_err(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.arch.input_dim
            ));
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.arch.num_hidden {
            return input_err(format!(
                "layer {layer} outside 1..={}",
                self.arch.num_hidden
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    /// Runs the full model, returning the activation after hidden layer `layer` and the logits.
    pub fn forward_capture(
        &self,
        x: &Matrix,
        layer: usize,
    ) -> Result<(CapturedActivation, Matrix)> {
        self.check_layer(layer)?;
        self.check_input(x)?;
        let mut h = x.clone();
        for dense in &self.layers[..layer] {
            h = dense.apply(&h)?;
        }
        let captured = CapturedActivation {
            layer,
            values: h.clone(),
        };
        for dense in &self.layers[layer..] {
            h = dense.apply(&h)?;
        }
        Ok((captured, h))
    }

    /// Activation after hidden layer `layer` only.
    pub fn capture(&self, x: &Matrix, layer: usize) -> Result<CapturedActivation> {
        self.check_layer(layer)?;
        self.check_input(x)?;
        let mut h = x.clone();
        for dense in &self.layers[..layer] {
            h = dense.apply(&h)?;
        }
        Ok(CapturedActivation { layer, values: h })
    }

    /// Applies layers `ℓ+1..=L` and the head to an activation captured at `ℓ`.
    pub fn forward_from(&self, h: &CapturedActivation) -> Result<Matrix> {
        self.check_layer(h.layer)?;
        if h.values.cols() != self.arch.hidden_dim {
            return shape_err(format!(
                "activation width {} but hidden width is {}",
                h.values.cols(),
                self.arch.hidden_dim
            ));
        }
        let mut out = h.values.clone();
        for dense in &self.layers[h.layer..] {
            out = dense.apply(&out)?;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.forward(x)?.argmax_rows())
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        Ok(accuracy_of(&self.predict(&ds.inputs)?, &ds.labels))
    }

    /// Mean cross-entropy on `(x, labels)` and gradients for layers `first_trainable..`.
    pub fn loss_and_grads(
        &self,
        x: &Matrix,
        labels: &[usize],
        first_trainable: usize,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for dense in &self.layers {
            let z = dense.pre_activation(&h)?;
            let mut out = z.clone();
            dense.activation.apply(&mut out);
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        let (loss, mut delta) = softmax_cross_entropy(&h, labels)?;
        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        for idx in (first_trainable..self.layers.len()).rev() {
            let dense = &self.layers[idx];
            if dense.activation == Activation::Relu {
                for (d, &z) in delta.data_mut().iter_mut().zip(pre[idx].data()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let weight = inputs[idx].matmul_tn(&delta)?;
            let bias = Matrix::row_vector(delta.column_sums());
            if idx > first_trainable {
                delta = delta.matmul_nt(&dense.weight)?;
            }
            grads[idx] = Some(LayerGrad { weight, bias });
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// Takes one optimizer step with `grads` on every layer that has one.
    pub fn apply_gradients(&mut self, opt: &mut OptimizerState, grads: &Gradients) -> Result<()> {
        let mut params: Vec<&mut Matrix> = Vec::new();
        let mut gs: Vec<&Matrix> = Vec::new();
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let Some(g) = g {
                params.push(&mut layer.weight);
                params.push(&mut layer.bias);
                gs.push(&g.weight);
                gs.push(&g.bias);
            }
        }
        opt.step(&mut params, &gs)
    }

    /// Adds `l2 * W` to each present weight gradient (biases are not decayed).
    pub fn add_weight_decay(&self, grads: &mut Gradients, l2: f64) {
        if l2 == 0.0 {
            return;
        }
        for (layer, g) in self.layers.iter().zip(grads.layers.iter_mut()) {
            if let Some(g) = g {
                for (gi, &w) in g.weight.data_mut().iter_mut().zip(layer.weight.data()) {
                    *gi += l2 * w;
                }
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }
}

pub fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Minibatch SGD settings for classifier training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 64,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return config_err("l2 must be non-negative");
        }
        OptimizerState::momentum(self.lr, self.momentum).map(|_| ())
    }

    pub fn optimizer(&self) -> Result<OptimizerState> {
        OptimizerState::momentum(self.lr, self.momentum)
    }
}

/// Shuffled minibatch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let order = rng.permutation(n);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

pub(crate) fn diverged(epoch: usize, step: usize, loss: f64) -> AuditError {
    AuditError::Training {
        epoch,
        step,
        message: format!("non-finite loss {loss}"),
    }
}

/// Trains layers `first_trainable..` on `(x, labels)`; returns mean loss per epoch.
pub fn fit(
    model: &mut LayeredClassifier,
    x: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    first_trainable: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.rows() == 0 {
        return input_err("cannot train on an empty dataset");
    }
    let mut opt = cfg.optimizer()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(x.rows(), cfg.batch_size, rng);
        for (step, idx) in batches.iter().enumerate() {
            let xb = x.select_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, mut grads) = model.loss_and_grads(&xb, &yb, first_trainable)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, step, loss));
            }
            model.add_weight_decay(&mut grads, cfg.l2);
            model.apply_gradients(&mut opt, &grads)?;
            total += loss * idx.len() as f64;
        }
        history.push(total / x.rows() as f64);
    }
    Ok(history)
}

/// Provenance and quality record stored alongside classifier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub id: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Classifier parameters plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LayeredClassifier,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    activations: Vec<Activation>,
    training: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            architecture: self.model.arch,
            activations: self.model.layers.iter().map(|l| l.activation).collect(),
            training: self.meta.clone(),
        };
        let mut c = Container::new(ArtifactKind::Checkpoint, serde_json::to_string(&header)?);
        for (i, layer) in self.model.layers.iter().enumerate() {
            c.push_f64(format!("layer{i}.weight"), layer.weight.clone());
            c.push_f64(format!("layer{i}.bias"), layer.bias.clone());
        }
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(ArtifactKind::Checkpoint)?;
        let header: CheckpointHeader = serde_json::from_str(&c.meta)
            .map_err(|e| AuditError::Format(format!("checkpoint metadata: {e}")))?;
        let arch = header.architecture;
        arch.validate()
            .map_err(|e| AuditError::Format(e.to_string()))?;
        if header.activations.len() != arch.num_hidden.saturating_add(1) {
            return Err(AuditError::Format("activation list length mismatch".into()));
        }
        let mut layers = Vec::with_capacity(header.activations.len());
        for (i, &activation) in header.activations.iter().enumerate() {
            let weight = c.matrix(&format!("layer{i}.weight"))?.clone();
            let bias = c.matrix(&format!("layer{i}.bias"))?.clone();
            if !weight.is_finite() || !bias.is_finite() {
                return Err(AuditError::Format(format!(
                    "layer {i} has non-finite values"
                )));
            }
            layers.push(Dense {
                weight,
                bias,
                activation,
            });
        }
        let model = LayeredClassifier::from_layers(arch, layers)
            .map_err(|e| AuditError::Format(e.to_string()))?;
        Ok(Self {
            model,
            meta: header.training,
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

/// Trains a fresh classifier on `train` and records accuracies on both splits.
pub fn train_classifier(
    train: &Dataset,
    test: &Dataset,
    arch: Architecture,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Checkpoint> {
    if train.input_dim() != arch.input_dim || train.num_classes != arch.num_classes {
        return config_err("dataset does not match the architecture");
    }
    let seed = rng.seed();
    let mut model = LayeredClassifier::new(arch, rng)?;
    fit(&mut model, &train.inputs, &train.labels, cfg, 0, rng)?;
    let meta = CheckpointMeta {
        id: "original".into(),
        seed,
        epochs: cfg.epochs,
        train_accuracy: model.accuracy(train)?,
        test_accuracy: model.accuracy(test)?,
    };
    Ok(Checkpoint { model, meta })
}

/// Accuracy restricted to each class; `None` for classes without samples.
pub fn per_class_accuracy(model: &LayeredClassifier, ds: &Dataset) -> Result<Vec<Option<f64>>> {
    let pred = model.predict(&ds.inputs)?;
    let mut hits = vec![0usize; ds.num_classes];
    let mut totals = vec![0usize; ds.num_classes];
    for (&p, &y) in pred.iter().zip(&ds.labels) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Split, SyntheticConfig};

    fn tiny_arch() -> Architecture {
        Architecture {
            input_dim: 3,
            hidden_dim: 4,
            num_hidden: 2,
            num_classes: 3,
        }
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = LayeredClassifier::zeros(tiny_arch()).unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i + j) as f64);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_hidden_layer_matches_matmul() {
        let arch = Architecture {
            num_hidden: 1,
            ..tiny_arch()
        };
        let m = LayeredClassifier::new(arch, &mut Rng::new(3)).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64 - 1.5) * (j as f64 + 0.5));
        let mut h = x.matmul(&m.layers[0].weight).unwrap();
        h.add_row_vector(m.layers[0].bias.data()).unwrap();
        let h = h.map(|v| v.max(0.0));
        let mut logits = h.matmul(&m.layers[1].weight).unwrap();
        logits.add_row_vector(m.layers[1].bias.data()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), logits);
    }

    #[test]
    fn batch_equals_stacked_rows() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(1)).unwrap();
        let x = Matrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let batch = m.forward(&x).unwrap();
        for i in 0..6 {
            let single = m.forward(&x.select_rows(&[i]).unwrap()).unwrap();
            assert_eq!(single.row(0), batch.row(i));
        }
    }

    #[test]
    fn splice_identity_every_layer() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(2)).unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i as f64) - (j as f64) * 0.3);
        let full = m.forward(&x).unwrap();
        for layer in 1..=2 {
            let (h, logits) = m.forward_capture(&x, layer).unwrap();
            assert_eq!(logits, full);
            assert_eq!(m.forward_from(&h).unwrap(), full);
        }
    }

    #[test]
    fn capture_on_zero_input_is_relu_bias() {
        let mut m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(2)).unwrap();
        m.layers[0].bias = Matrix::row_vector(vec![0.5, -1.0, 0.0, 2.0]);
        let (h, _) = m.forward_capture(&Matrix::zeros(3, 3), 1).unwrap();
        for row in h.values.row_iter() {
            assert_eq!(row, &[0.5, 0.0, 0.0, 2.0]);
        }
    }

    #[test]
    fn last_layer_splice_is_head() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(8)).unwrap();
        let h = CapturedActivation {
            layer: 2,
            values: Matrix::from_fn(2, 4, |i, j| (i + j) as f64),
        };
        let head = &m.layers[2];
        let mut want = h.values.matmul(&head.weight).unwrap();
        want.add_row_vector(head.bias.data()).unwrap();
        assert_eq!(m.forward_from(&h).unwrap(), want);
    }

    #[test]
    fn zero_activation_scaling() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(8)).unwrap();
        let h = CapturedActivation {
            layer: 1,
            values: Matrix::from_fn(2, 4, |i, j| (i * j) as f64 + 1.0),
        };
        let scaled = CapturedActivation {
            layer: 1,
            values: h.values.scale(0.0),
        };
        let zero = CapturedActivation {
            layer: 1,
            values: Matrix::zeros(2, 4),
        };
        assert_eq!(
            m.forward_from(&scaled).unwrap(),
            m.forward_from(&zero).unwrap()
        );
    }

    #[test]
    fn layer_and_shape_errors() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(0)).unwrap();
        let x = Matrix::zeros(1, 3);
        assert!(matches!(
            m.forward_capture(&x, 0),
            Err(AuditError::Input(_))
        ));
        assert!(matches!(
            m.forward_capture(&x, 3),
            Err(AuditError::Input(_))
        ));
        assert!(matches!(
            m.forward(&Matrix::zeros(1, 2)),
            Err(AuditError::Shape(_))
        ));
        let bad = CapturedActivation {
            layer: 1,
            values: Matrix::zeros(1, 5),
        };
        assert!(matches!(m.forward_from(&bad), Err(AuditError::Shape(_))));
    }

    #[test]
    fn separable_two_class_is_perfect() {
        let cfg = SyntheticConfig {
            num_classes: 2,
            samples_per_class: 100,
            d_in: 4,
            class_separation: 100.0,
            intra_noise: 0.01,
        };
        let mut rng = Rng::new(5);
        let (train, test) = generate_synthetic(&cfg, &mut rng).unwrap();
        let arch = Architecture {
            input_dim: 4,
            hidden_dim: 8,
            num_hidden: 2,
            num_classes: 2,
        };
        let tc = TrainConfig {
            epochs: 10,
            lr: 0.001,
            ..TrainConfig::default()
        };
        let ck = train_classifier(&train, &test, arch, &tc, &mut rng).unwrap();
        assert_eq!(ck.meta.test_accuracy, 1.0);
    }

    #[test]
    fn zero_epochs_is_near_chance() {
        let cfg = SyntheticConfig::default();
        let mut rng = Rng::new(6);
        let (train, test) = generate_synthetic(&cfg, &mut rng).unwrap();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let ck = train_classifier(&train, &test, Architecture::default(), &tc, &mut rng).unwrap();
        assert!(ck.meta.test_accuracy < 0.4, "{}", ck.meta.test_accuracy);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(4)).unwrap();
        let ck = Checkpoint {
            model: m,
            meta: CheckpointMeta {
                id: "x".into(),
                seed: 4,
                epochs: 0,
                train_accuracy: 0.25,
                test_accuracy: 1.0 / 3.0,
            },
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = Dataset::new(
            Matrix::from_fn(8, 3, |i, j| ((i + j) % 3) as f64 * 1e3),
            (0..8).map(|i| i % 3).collect(),
            3,
            Split::Train,
        )
        .unwrap();
        let mut m = LayeredClassifier::new(tiny_arch(), &mut Rng::new(0)).unwrap();
        let cfg = TrainConfig {
            lr: 1e6,
            epochs: 50,
            ..TrainConfig::default()
        };
        let err = fit(&mut m, &ds.inputs, &ds.labels, &cfg, 0, &mut Rng::new(1));
        assert!(matches!(err, Err(AuditError::Training { .. })), "{err:?}");
    }
}
