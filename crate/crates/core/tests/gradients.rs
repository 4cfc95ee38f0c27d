// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analytic gradients against central finite differences, and the matmul
//! kernel against a triple loop.

use proptest::prelude::*;
use unlearn_audit::model::{Architecture, LayeredClassifier};
use unlearn_audit::numerics::{softmax_cross_entropy, Matrix, Rng};
use unlearn_audit::sae::{SaeConfig, SaeModel, TrainedOn};

const H: f64 = 1e-6;

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Relative error; the floor keeps round-off on near-zero entries from dominating.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop(seed in any::<u64>(), n in 1usize..9, k in 1usize..9, m in 1usize..9) {
        let mut rng = Rng::new(seed);
        let a = random_matrix(n, k, &mut rng);
        let b = random_matrix(k, m, &mut rng);
        let want = triple_loop(&a, &b);
        prop_assert!(a.matmul(&b).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
        prop_assert!(a.transpose().matmul_tn(&b).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
        prop_assert!(a.matmul_nt(&b.transpose()).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_gradient(seed in any::<u64>(), n in 1usize..6, c in 2usize..7) {
        let mut rng = Rng::new(seed);
        let logits = random_matrix(n, c, &mut rng).scale(3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        for idx in 0..n * c {
            let mut plus = logits.clone();
            plus.data_mut()[idx] += H;
            let mut minus = logits.clone();
            minus.data_mut()[idx] -= H;
            let numeric = (softmax_cross_entropy(&plus, &labels).unwrap().0
                - softmax_cross_entropy(&minus, &labels).unwrap().0)
                / (2.0 * H);
            prop_assert!(rel_err(grad.data()[idx], numeric) <= 1e-4, "entry {idx}: {} vs {numeric}", grad.data()[idx]);
        }
    }
}

fn nudge(m: &mut LayeredClassifier, layer: usize, which: usize, p: usize, delta: f64) {
    let layer = &mut m.layers_mut()[layer];
    let target = if which == 0 {
        &mut layer.weight
    } else {
        &mut layer.bias
    };
    target.data_mut()[p] += delta;
}

fn check_classifier(arch: Architecture, seed: u64, first_trainable: usize) {
    let mut rng = Rng::new(seed);
    let mut model = LayeredClassifier::new(arch, &mut rng).unwrap();
    // Nonzero biases keep pre-activations off the relu kink.
    for layer in model.layers_mut() {
        layer
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = 0.5 * rng.normal());
    }
    let x = random_matrix(5, arch.input_dim, &mut rng);
    let labels: Vec<usize> = (0..5).map(|_| rng.below(arch.num_classes)).collect();
    let (_, grads) = model.loss_and_grads(&x, &labels, first_trainable).unwrap();
    let loss_at = |m: &LayeredClassifier| m.loss_and_grads(&x, &labels, 0).unwrap().0;
    for (idx, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else {
            assert!(idx < first_trainable, "layer {idx} missing a gradient");
            continue;
        };
        for (which, analytic) in [(0, g.weight.data()), (1, g.bias.data())] {
            for (p, &a) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                nudge(&mut plus, idx, which, p, H);
                nudge(&mut minus, idx, which, p, -H);
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
                assert!(
                    rel_err(a, numeric) <= 1e-4,
                    "layer {idx} param {which}/{p}: analytic {a} numeric {numeric}"
                );
            }
        }
    }
}

#[test]
fn two_layer_classifier_gradients() {
    let arch = Architecture {
        input_dim: 4,
        hidden_dim: 5,
        num_hidden: 1,
        num_classes: 3,
    };
    for seed in 0..10 {
        check_classifier(arch, seed, 0);
    }
}

#[test]
fn deep_classifier_gradients_with_frozen_prefix() {
    let arch = Architecture {
        input_dim: 3,
        hidden_dim: 4,
        num_hidden: 4,
        num_classes: 3,
    };
    for seed in 0..5 {
        check_classifier(arch, seed, 0);
        check_classifier(arch, seed, 2);
    }
}

fn small_sae(seed: u64) -> (SaeModel, Matrix) {
    let cfg = SaeConfig {
        d: 4,
        m: 6,
        k: 2,
        seed,
        ..SaeConfig::default()
    };
    let mut rng = Rng::new(seed ^ 0x5ae);
    let x = random_matrix(7, 4, &mut rng);
    let mut sae = SaeModel::init(
        &cfg,
        &x.column_means(),
        TrainedOn {
            model_id: "probe".into(),
            layer: 1,
        },
    )
    .unwrap();
    // Move away from the tied initialization so every parameter matters.
    for m in [&mut sae.encoder, &mut sae.enc_bias, &mut sae.dec_bias] {
        m.data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.3 * rng.normal());
    }
    (sae, x)
}

#[test]
fn sae_straight_through_gradient() {
    let mut checked = 0usize;
    for seed in 0..10 {
        let (sae, x) = small_sae(seed);
        let norm = 1.7;
        let (_, g) = sae.loss_and_grads(&x, norm).unwrap();
        let support = |s: &SaeModel| -> Vec<bool> {
            s.encode_values(&x)
                .unwrap()
                .data()
                .iter()
                .map(|&v| v > 0.0)
                .collect()
        };
        let base = support(&sae);
        for (which, analytic) in [
            (0, g.encoder.data()),
            (1, g.enc_bias.data()),
            (2, g.decoder.data()),
            (3, g.dec_bias.data()),
        ] {
            for (p, &a) in analytic.iter().enumerate() {
                let perturb = |delta: f64| {
                    let mut s = sae.clone();
                    let target = match which {
                        0 => &mut s.encoder,
                        1 => &mut s.enc_bias,
                        2 => &mut s.decoder,
                        _ => &mut s.dec_bias,
                    };
                    target.data_mut()[p] += delta;
                    s
                };
                let (plus, minus) = (perturb(H), perturb(-H));
                if support(&plus) != base || support(&minus) != base {
                    continue;
                }
                let numeric = (plus.loss_and_grads(&x, norm).unwrap().0
                    - minus.loss_and_grads(&x, norm).unwrap().0)
                    / (2.0 * H);
                assert!(
                    rel_err(a, numeric) <= 1e-4,
                    "seed {seed} param {which}/{p}: analytic {a} numeric {numeric}"
                );
                checked += 1;
            }
        }
    }
    assert!(
        checked > 500,
        "too few coordinates with a stable mask: {checked}"
    );
}
