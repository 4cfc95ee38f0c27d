// SPDX-License-Identifier: MIT OR Apache-2.0

//! Method implementations behind the registry.

use tracing::debug;

use super::{MethodName, UnlearnMethodSpec};
use crate::data::ForgetRetainSplit;
use crate::error::{config_err, Result};
use crate::model::{diverged, epoch_batches, fit, Gradients, LayeredClassifier, TrainConfig};
use crate::numerics::{Matrix, Rng};

/// Weights with magnitude below this are zeroed after L1 fine-tuning.
pub const HARD_THRESHOLD: f64 = 1e-4;

pub(super) fn dispatch(
    spec: &UnlearnMethodSpec,
    original: &LayeredClassifier,
    split: &ForgetRetainSplit,
    rng: &mut Rng,
) -> Result<LayeredClassifier> {
    let mut model = original.clone();
    match spec.name {
        MethodName::Retrain => retrain(&mut model, split, spec, rng)?,
        MethodName::Finetune => {
            fit_retain(&mut model, split, &train_config(spec, "lr", true), 0, rng)?
        }
        MethodName::RandomLabel => random_label(&mut model, split, spec, rng)?,
        MethodName::AdvNegGrad => adv_neg_grad(&mut model, split, spec, rng)?,
        MethodName::CfK => {
            let first = first_trainable(&model, spec)?;
            fit_retain(
                &mut model,
                split,
                &train_config(spec, "lr", true),
                first,
                rng,
            )?
        }
        MethodName::EuK => eu_k(&mut model, split, spec, rng)?,
        MethodName::L1Sparse => l1_sparse(&mut model, split, spec, rng)?,
        MethodName::FisherDampen => fisher_dampen(&mut model, split, spec)?,
    }
    Ok(model)
}

fn train_config(spec: &UnlearnMethodSpec, lr_key: &str, with_l2: bool) -> TrainConfig {
    TrainConfig {
        epochs: spec.get_usize("epochs"),
        lr: spec.get(lr_key),
        momentum: spec.get("momentum"),
        batch_size: spec.get_usize("batch_size"),
        l2: if with_l2 { spec.get("l2") } else { 0.0 },
    }
}

fn fit_retain(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    cfg: &TrainConfig,
    first_trainable: usize,
    rng: &mut Rng,
) -> Result<()> {
    let history = fit(
        model,
        &split.retain.inputs,
        &split.retain.labels,
        cfg,
        first_trainable,
        rng,
    )?;
    debug!(?history, first_trainable, "retain fine-tune");
    Ok(())
}

/// Index of the first trainable layer when the last `k_layers` hidden layers and the head train.
fn first_trainable(model: &LayeredClassifier, spec: &UnlearnMethodSpec) -> Result<usize> {
    let k = spec.get_usize("k_layers");
    let hidden = model.num_hidden();
    if k > hidden {
        return config_err(format!("k_layers = {k} exceeds the {hidden} hidden layers"));
    }
    Ok(hidden - k)
}

// ----------------------------------------------------------------------------
// Output-level methods
// ----------------------------------------------------------------------------

fn retrain(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
    rng: &mut Rng,
) -> Result<()> {
    let head = model.num_hidden();
    model.reinit_layer(head, rng);
    fit_retain(model, split, &train_config(spec, "lr", true), 0, rng)
}

fn random_label(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
    rng: &mut Rng,
) -> Result<()> {
    let cfg = train_config(spec, "lr", false);
    let c = split.forget_class;
    let num_classes = split.retain.num_classes;
    if num_classes < 2 {
        return config_err("random relabeling needs at least two classes");
    }
    let x = Matrix::vstack(&[&split.retain.inputs, &split.forget.inputs])?;
    let n_retain = split.retain.len();
    let mut opt = cfg.optimizer()?;
    for epoch in 0..cfg.epochs {
        let mut labels = split.retain.labels.clone();
        labels.extend((0..split.forget.len()).map(|_| {
            let r = rng.below(num_classes - 1);
            if r >= c {
                r + 1
            } else {
                r
            }
        }));
        debug_assert_eq!(labels.len(), n_retain + split.forget.len());
        for (step, idx) in epoch_batches(x.rows(), cfg.batch_size, rng)
            .iter()
            .enumerate()
        {
            let xb = x.select_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_grads(&xb, &yb, 0)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, step, loss));
            }
            model.apply_gradients(&mut opt, &grads)?;
        }
    }
    Ok(())
}

fn adv_neg_grad(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
    rng: &mut Rng,
) -> Result<()> {
    let cfg = train_config(spec, "descent_lr", false);
    // Ascent enters the shared optimizer step scaled relative to descent.
    let ascent_scale = spec.get("ascent_lr") / spec.get("descent_lr");
    let max_forget_loss = spec.get("max_forget_loss");
    let mut opt = cfg.optimizer()?;
    let forget = &split.forget;
    for epoch in 0..cfg.epochs {
        let retain_batches = epoch_batches(split.retain.len(), cfg.batch_size, rng);
        let forget_order = rng.permutation(forget.len());
        for (step, idx) in retain_batches.iter().enumerate() {
            let xb = split.retain.inputs.select_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| split.retain.labels[i]).collect();
            let (loss, mut grads) = model.loss_and_grads(&xb, &yb, 0)?;
            let fidx: Vec<usize> = (0..cfg.batch_size.min(forget.len()))
                .map(|i| forget_order[(step * cfg.batch_size + i) % forget.len()])
                .collect();
            let xf = forget.inputs.select_rows(&fidx)?;
            let yf: Vec<usize> = fidx.iter().map(|&i| forget.labels[i]).collect();
            let (forget_loss, forget_grads) = model.loss_and_grads(&xf, &yf, 0)?;
            if !loss.is_finite() || !forget_loss.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, step, loss));
            }
            if forget_loss < max_forget_loss {
                grads.add_scaled(&forget_grads, -ascent_scale);
            }
            model.apply_gradients(&mut opt, &grads)?;
        }
    }
    Ok(())
}

fn l1_sparse(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
    rng: &mut Rng,
) -> Result<()> {
    let cfg = train_config(spec, "lr", false);
    let l1 = spec.get("l1_weight");
    let threshold = spec.get("threshold");
    let mut opt = cfg.optimizer()?;
    let retain = &split.retain;
    for epoch in 0..cfg.epochs {
        for (step, idx) in epoch_batches(retain.len(), cfg.batch_size, rng)
            .iter()
            .enumerate()
        {
            let xb = retain.inputs.select_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| retain.labels[i]).collect();
            let (loss, mut grads) = model.loss_and_grads(&xb, &yb, 0)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(epoch, step, loss));
            }
            add_l1_subgradient(model, &mut grads, l1);
            model.apply_gradients(&mut opt, &grads)?;
        }
    }
    let mut zeroed = 0usize;
    for layer in model.layers_mut() {
        for w in layer.weight.data_mut() {
            if w.abs() < threshold && *w != 0.0 {
                *w = 0.0;
                zeroed += 1;
            }
        }
    }
    debug!(zeroed, "hard threshold");
    Ok(())
}

fn add_l1_subgradient(model: &LayeredClassifier, grads: &mut Gradients, l1: f64) {
    if l1 == 0.0 {
        return;
    }
    for (layer, g) in model.layers().iter().zip(grads.layers.iter_mut()) {
        if let Some(g) = g {
            for (gi, &w) in g.weight.data_mut().iter_mut().zip(layer.weight.data()) {
                if w != 0.0 {
                    *gi += l1 * w.signum();
                }
            }
        }
    }
}

// ----------------------------------------------------------------------------
// Structural methods
// ----------------------------------------------------------------------------

fn eu_k(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
    rng: &mut Rng,
) -> Result<()> {
    let first = first_trainable(model, spec)?;
    for idx in first..=model.num_hidden() {
        model.reinit_layer(idx, rng);
    }
    fit_retain(model, split, &train_config(spec, "lr", false), first, rng)
}

/// Mean squared per-sample gradient of every weight and bias, layer by layer.
pub fn diagonal_fisher(
    model: &LayeredClassifier,
    x: &Matrix,
    labels: &[usize],
) -> Result<Vec<(Matrix, Matrix)>> {
    let mut acc: Vec<(Matrix, Matrix)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                Matrix::zeros(l.weight.rows(), l.weight.cols()),
                Matrix::zeros(1, l.bias.cols()),
            )
        })
        .collect();
    if x.rows() == 0 {
        return Ok(acc);
    }
    for i in 0..x.rows() {
        let xi = x.select_rows(&[i])?;
        let (_, grads) = model.loss_and_grads(&xi, &labels[i..=i], 0)?;
        for ((fw, fb), g) in acc.iter_mut().zip(&grads.layers) {
            let g = g.as_ref().expect("all layers trainable");
            for (f, v) in fw.data_mut().iter_mut().zip(g.weight.data()) {
                *f += v * v;
            }
            for (f, v) in fb.data_mut().iter_mut().zip(g.bias.data()) {
                *f += v * v;
            }
        }
    }
    let inv = 1.0 / x.rows() as f64;
    for (fw, fb) in &mut acc {
        fw.data_mut().iter_mut().for_each(|v| *v *= inv);
        fb.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok(acc)
}

fn fisher_dampen(
    model: &mut LayeredClassifier,
    split: &ForgetRetainSplit,
    spec: &UnlearnMethodSpec,
) -> Result<()> {
    let constant = spec.get("dampening_constant");
    let ratio = spec.get("selection_ratio");
    let f_forget = diagonal_fisher(model, &split.forget.inputs, &split.forget.labels)?;
    let f_retain = diagonal_fisher(model, &split.retain.inputs, &split.retain.labels)?;
    let mut selected = 0usize;
    for ((layer, (ffw, ffb)), (frw, frb)) in
        model.layers_mut().iter_mut().zip(&f_forget).zip(&f_retain)
    {
        for (params, ff, fr) in [(&mut layer.weight, ffw, frw), (&mut layer.bias, ffb, frb)] {
            for ((w, &a), &b) in params.data_mut().iter_mut().zip(ff.data()).zip(fr.data()) {
                if a > ratio * b {
                    *w *= constant;
                    selected += 1;
                }
            }
        }
    }
    debug!(selected, "fisher dampening");
    Ok(())
}
