// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance gates for the toolkit, one line of output per criterion.
//!
//! Runs without the libtest harness so every gate prints its verdict and
//! wall time even when it passes. Gates 6, 8, 9 and 10 share two full
//! pipeline runs on the default configuration.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use unlearn_audit::audit::{
    compute_feature_stats, expert_count, solve_assignment, steer_codes, steered_activations,
    ErrorTerm, ExpertFeatureSet, FeatureMatching, SteeringConfig,
};
use unlearn_audit::data::{generate_synthetic, Dataset, SyntheticConfig};
use unlearn_audit::model::{Architecture, Checkpoint, LayeredClassifier};
use unlearn_audit::numerics::{softmax_cross_entropy, Matrix, Rng};
use unlearn_audit::sae::{SaeConfig, SaeModel, SparseCode, TrainedOn};
use unlearn_audit::unlearn::MethodName;
use unlearn_audit_cli::pipeline::{
    PipelineReport, PERSISTENCE_METHOD, PERSISTENCE_MIN_GAIN, REPORT_CSV, REPORT_JSON, REPORT_MD,
};
use unlearn_audit_cli::{run_pipeline, PipelineConfig, PipelineOutcome};

type Gate = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration, what: &str) -> std::result::Result<(), String> {
    let took = started.elapsed();
    ensure(took <= budget, || {
        format!("{what} took {took:.1?}, budget {budget:?}")
    })
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

// ----------------------------------------------------------------------------
// 1. Numerics
// ----------------------------------------------------------------------------

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

fn gate_numerics() -> Gate {
    let started = Instant::now();
    let mut rng = Rng::new(0xacc1);
    let mut worst_matmul = 0.0f64;
    for _ in 0..200 {
        let (n, k, m) = (1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12));
        let a = random_matrix(n, k, &mut rng);
        let b = random_matrix(k, m, &mut rng);
        let got = a.matmul(&b).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..m {
                let want: f64 = (0..k).map(|t| a.get(i, t) * b.get(t, j)).sum();
                worst_matmul = worst_matmul.max((got.get(i, j) - want).abs());
            }
        }
    }
    ensure(worst_matmul <= 1e-12, || {
        format!("matmul error {worst_matmul:e}")
    })?;

    let mut worst_grad = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..20 {
        let (n, c) = (1 + rng.below(6), 2 + rng.below(5));
        let logits = random_matrix(n, c, &mut rng).scale(3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).map_err(|e| e.to_string())?;
        for idx in 0..n * c {
            let num = central_difference(|d| {
                let mut p = logits.clone();
                p.data_mut()[idx] += d;
                softmax_cross_entropy(&p, &labels).unwrap().0
            });
            worst_grad = worst_grad.max(rel_err(g.data()[idx], num));
            checked += 1;
        }
    }

    for trial in 0..6 {
        let arch = Architecture {
            input_dim: 2 + rng.below(4),
            hidden_dim: 2 + rng.below(5),
            num_hidden: 1 + rng.below(4),
            num_classes: 2 + rng.below(3),
        };
        let mut model = LayeredClassifier::new(arch, &mut rng).map_err(|e| e.to_string())?;
        for layer in model.layers_mut() {
            layer
                .bias
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = 0.5 * rng.normal());
        }
        let x = random_matrix(5, arch.input_dim, &mut rng);
        let labels: Vec<usize> = (0..5).map(|_| rng.below(arch.num_classes)).collect();
        let first = trial % (arch.num_hidden + 1);
        let (_, grads) = model
            .loss_and_grads(&x, &labels, first)
            .map_err(|e| e.to_string())?;
        for (idx, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            for (which, analytic) in [(0, g.weight.data()), (1, g.bias.data())] {
                for (p, &a) in analytic.iter().enumerate() {
                    let num = central_difference(|d| {
                        let mut m = model.clone();
                        let layer = &mut m.layers_mut()[idx];
                        let t = if which == 0 {
                            &mut layer.weight
                        } else {
                            &mut layer.bias
                        };
                        t.data_mut()[p] += d;
                        m.loss_and_grads(&x, &labels, 0).unwrap().0
                    });
                    worst_grad = worst_grad.max(rel_err(a, num));
                    checked += 1;
                }
            }
        }
    }

    for seed in 0..6 {
        let cfg = SaeConfig {
            d: 4,
            m: 6,
            k: 2,
            seed,
            ..SaeConfig::default()
        };
        let x = random_matrix(7, 4, &mut rng);
        let trained_on = TrainedOn {
            model_id: "gate".into(),
            layer: 1,
        };
        let mut sae =
            SaeModel::init(&cfg, &x.column_means(), trained_on).map_err(|e| e.to_string())?;
        for m in [&mut sae.encoder, &mut sae.enc_bias, &mut sae.dec_bias] {
            m.data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.3 * rng.normal());
        }
        let (_, g) = sae.loss_and_grads(&x, 1.3).map_err(|e| e.to_string())?;
        let support = |s: &SaeModel| -> Vec<bool> {
            s.encode_values(&x)
                .unwrap()
                .data()
                .iter()
                .map(|&v| v > 0.0)
                .collect()
        };
        let base = support(&sae);
        let tensors = [
            g.encoder.data(),
            g.enc_bias.data(),
            g.decoder.data(),
            g.dec_bias.data(),
        ];
        for (which, analytic) in tensors.iter().enumerate() {
            for (p, &a) in analytic.iter().enumerate() {
                let shifted = |d: f64| {
                    let mut s = sae.clone();
                    let t = match which {
                        0 => &mut s.encoder,
                        1 => &mut s.enc_bias,
                        2 => &mut s.decoder,
                        _ => &mut s.dec_bias,
                    };
                    t.data_mut()[p] += d;
                    s
                };
                // The straight-through gradient is only defined away from TopK ties.
                if support(&shifted(H)) != base || support(&shifted(-H)) != base {
                    continue;
                }
                let num = central_difference(|d| shifted(d).loss_and_grads(&x, 1.3).unwrap().0);
                worst_grad = worst_grad.max(rel_err(a, num));
                checked += 1;
            }
        }
    }
    ensure(worst_grad <= GRAD_TOL, || {
        format!("gradient rel-err {worst_grad:e}")
    })?;
    within(started, Duration::from_secs(10), "numerics suite")?;
    Ok(format!(
        "matmul max err {worst_matmul:.1e}; {checked} gradient entries, max rel-err {worst_grad:.1e}"
    ))
}

// ----------------------------------------------------------------------------
// 2. SAE invariants
// ----------------------------------------------------------------------------

fn load_run(root: &Path) -> std::result::Result<(Checkpoint, Dataset), String> {
    let model = Checkpoint::load(&root.join("model/original.ckpt")).map_err(|e| e.to_string())?;
    let test = Dataset::load(&root.join("data/test.bin")).map_err(|e| e.to_string())?;
    Ok((model, test))
}

fn load_sae(root: &Path, model: &str, layer: usize) -> std::result::Result<SaeModel, String> {
    SaeModel::load(&root.join(format!("sae/{model}/L{layer}.sae"))).map_err(|e| e.to_string())
}

fn gate_sae(run: &PipelineOutcome, config: &PipelineConfig) -> Gate {
    let started = Instant::now();
    let (ckpt, _) = load_run(&run.root)?;
    // Fresh draws from the same task, disjoint from the training stream.
    let data = SyntheticConfig {
        samples_per_class: 1000,
        ..config.data.clone()
    };
    let (a, b) = generate_synthetic(&data, &mut Rng::new(0xfeed)).map_err(|e| e.to_string())?;
    let inputs = Matrix::vstack(&[&a.inputs, &b.inputs]).map_err(|e| e.to_string())?;
    ensure(inputs.rows() >= 10_000, || {
        format!("only {} samples", inputs.rows())
    })?;
    let mut encoded = 0;
    for ev in &run.report.expert_validation {
        let layer = ev.ablation.layer;
        let sae = load_sae(&run.root, "original", layer)?;
        let h = ckpt
            .model
            .capture(&inputs, layer)
            .map_err(|e| e.to_string())?;
        let code = sae.encode(&h).map_err(|e| e.to_string())?;
        for (i, row) in code.values.row_iter().enumerate() {
            let nz = row.iter().filter(|&&v| v != 0.0).count();
            ensure(nz <= sae.k(), || {
                format!("L{layer} row {i}: {nz} nonzeros > K")
            })?;
            ensure(row.iter().all(|&v| v >= 0.0), || {
                format!("L{layer} row {i}: negative entry")
            })?;
        }
        encoded += code.values.rows();
        for (j, row) in sae.decoder.row_iter().enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            ensure((n - 1.0).abs() <= 1e-9, || {
                format!("L{layer} decoder row {j} norm {n}")
            })?;
        }
        if let Some(t) = sae.loss_history.windows(5).position(|w| w[4] > w[0]) {
            return Err(format!("L{layer} loss rises across epochs {t}..{}", t + 4));
        }
        ensure(ev.sae_final_loss < ev.sae_initial_loss / 5.0, || {
            format!(
                "L{layer} loss {:.4} -> {:.4} is not a 5x reduction",
                ev.sae_initial_loss, ev.sae_final_loss
            )
        })?;
    }
    within(started, Duration::from_secs(120), "SAE checks")?;
    let ratios: Vec<String> = run
        .report
        .expert_validation
        .iter()
        .map(|e| {
            format!(
                "L{} {:.1}x",
                e.ablation.layer,
                e.sae_initial_loss / e.sae_final_loss
            )
        })
        .collect();
    Ok(format!(
        "{encoded} codes checked; 5-epoch windows non-increasing; loss reduction {}",
        ratios.join(", ")
    ))
}

// ----------------------------------------------------------------------------
// 3-5. Expert count, feature statistics, assignment
// ----------------------------------------------------------------------------

fn gate_expert_count() -> Gate {
    ensure(expert_count(16) == 20, || {
        format!("K=16 gives {}", expert_count(16))
    })?;
    ensure(expert_count(32) == 40, || {
        format!("K=32 gives {}", expert_count(32))
    })?;
    Ok("K=16 -> 20, K=32 -> 40".into())
}

fn random_code(rows: usize, m: usize, k: usize, rng: &mut Rng) -> SparseCode {
    let mut values = Matrix::zeros(rows, m);
    for i in 0..rows {
        let perm = rng.permutation(m);
        for &j in &perm[..rng.below(k + 1)] {
            values.set(i, j, rng.uniform(0.01, 2.0));
        }
    }
    SparseCode { values }
}

fn gate_feature_stats() -> Gate {
    let started = Instant::now();
    let mut rng = Rng::new(0xacc4);
    for trial in 0..100 {
        let n = 1 + rng.below(1000);
        let m = 1 + rng.below(64);
        let c = 1 + rng.below(10);
        let code = random_code(n, m, 1 + rng.below(m), &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let stats = compute_feature_stats(&code, &labels, c).map_err(|e| e.to_string())?;
        let mut class_counts = vec![0usize; c];
        let mut act = vec![0usize; m];
        let mut co = vec![vec![0usize; c]; m];
        for (i, &y) in labels.iter().enumerate() {
            class_counts[y] += 1;
            for j in 0..m {
                if code.values.get(i, j) > 0.0 {
                    act[j] += 1;
                    co[j][y] += 1;
                }
            }
        }
        let ok = stats.total_samples == n
            && stats.class_counts == class_counts
            && stats.activation_count == act
            && (0..m).all(|j| (0..c).all(|y| stats.co_count(j, y) == co[j][y]));
        ensure(ok, || {
            format!("trial {trial} disagrees with the counting oracle")
        })?;
    }
    within(started, Duration::from_secs(30), "feature statistics")?;
    Ok("100/100 instances match".into())
}

fn brute_force_min(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.rows() {
            *best = best.min(acc);
            return;
        }
        for col in 0..cost.rows() {
            if !used[col] {
                used[col] = true;
                go(cost, row + 1, used, acc + cost.get(row, col), best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

fn gate_assignment() -> Gate {
    let started = Instant::now();
    let mut rng = Rng::new(0xacc5);
    for trial in 0..50 {
        let planted = rng.permutation(256);
        let cost = Matrix::from_fn(256, 256, |i, j| {
            if planted[i] == j {
                rng.uniform(0.0, 0.05)
            } else {
                rng.uniform(0.1, 2.0)
            }
        });
        let got = solve_assignment(&cost).map_err(|e| e.to_string())?;
        ensure(got.row_to_col == planted, || {
            format!("planted trial {trial} not recovered")
        })?;
    }
    for trial in 0..200 {
        let n = 1 + trial % 8;
        let integer = trial % 3 == 0;
        let cost = Matrix::from_fn(n, n, |_, _| {
            if integer {
                rng.below(5) as f64
            } else {
                rng.uniform(-1.0, 1.0)
            }
        });
        let got = solve_assignment(&cost).map_err(|e| e.to_string())?;
        let total: f64 = got
            .row_to_col
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.get(i, j))
            .sum();
        let best = brute_force_min(&cost);
        ensure((total - best).abs() <= 1e-9, || {
            format!("trial {trial} (m={n}): cost {total} vs exhaustive {best}")
        })?;
    }
    within(started, Duration::from_secs(60), "assignment")?;
    Ok("50/50 planted at m=256; 200/200 exhaustive at m<=8".into())
}

// ----------------------------------------------------------------------------
// 6-10. Pipeline gates
// ----------------------------------------------------------------------------

fn gate_ablation(report: &PipelineReport) -> Gate {
    let mut parts = Vec::new();
    ensure(!report.expert_validation.is_empty(), || {
        "no expert validation".into()
    })?;
    for ev in &report.expert_validation {
        let a = &ev.ablation;
        ensure(a.forget_drop >= 50.0 && a.retain_drift <= 5.0, || {
            format!(
                "L{}: drop {:.1}, drift {:.1}",
                a.layer, a.forget_drop, a.retain_drift
            )
        })?;
        parts.push(format!(
            "L{} drop {:.1} drift {:.1}",
            a.layer, a.forget_drop, a.retain_drift
        ));
    }
    Ok(parts.join("; "))
}

fn gate_steering(run: &PipelineOutcome) -> Gate {
    let (ckpt, test) = load_run(&run.root)?;
    let model = &ckpt.model;
    let ev = run
        .report
        .expert_validation
        .first()
        .ok_or("no audit layer")?;
    let layer = ev.ablation.layer;
    let sae = load_sae(&run.root, "original", layer)?;
    let unl_sae = load_sae(&run.root, "finetune", layer)?;
    let unl =
        Checkpoint::load(&run.root.join("unlearn/finetune.ckpt")).map_err(|e| e.to_string())?;
    let err = |e: unlearn_audit::AuditError| e.to_string();

    let mut rng = Rng::new(0xacc7);
    let cfg = |alpha: f64, experts: ExpertFeatureSet, matching: FeatureMatching| SteeringConfig {
        alpha,
        layer,
        experts,
        matching,
        error_term: ErrorTerm::Drop,
    };
    let permuted = FeatureMatching {
        permutation: rng.permutation(sae.m()),
        ..FeatureMatching::identity(sae.m())
    };

    // alpha = 0 is exactly the passthrough.
    let zero = steered_activations(
        model,
        &unl.model,
        &sae,
        &unl_sae,
        &cfg(0.0, ev.experts.clone(), permuted.clone()),
        &test.inputs,
    )
    .map_err(err)?;
    ensure(zero.steered == zero.passthrough, || {
        "alpha=0 differs from passthrough".into()
    })?;
    let zero_logits = unl.model.forward_from(&zero.steered).map_err(err)?;
    let pass_logits = unl.model.forward_from(&zero.passthrough).map_err(err)?;
    ensure(zero_logits == pass_logits, || {
        "alpha=0 logits differ".into()
    })?;

    // Non-expert slots are untouched.
    let c_orig = sae
        .encode(&model.capture(&test.inputs, layer).map_err(err)?)
        .map_err(err)?;
    let c_unl = unl_sae
        .encode(&unl.model.capture(&test.inputs, layer).map_err(err)?)
        .map_err(err)?;
    let steered = steer_codes(
        &c_orig.values,
        &c_unl.values,
        &ev.experts.indices,
        &permuted,
        10.0,
    )
    .map_err(err)?;
    let targets: Vec<usize> = ev
        .experts
        .indices
        .iter()
        .map(|&j| permuted.map(j))
        .collect();
    for i in 0..steered.rows() {
        for t in (0..sae.m()).filter(|t| !targets.contains(t)) {
            ensure(
                steered.get(i, t).to_bits() == c_unl.values.get(i, t).to_bits(),
                || format!("non-expert slot {t} changed in row {i}"),
            )?;
        }
    }

    // unl = orig, alpha = 1, every latent: original passthrough logits.
    let all = ExpertFeatureSet {
        indices: (0..sae.m()).collect(),
        f1_scores: vec![0.0; sae.m()],
        ..ev.experts.clone()
    };
    let same = steered_activations(
        model,
        model,
        &sae,
        &sae,
        &cfg(1.0, all, FeatureMatching::identity(sae.m())),
        &test.inputs,
    )
    .map_err(err)?;
    let h = model.capture(&test.inputs, layer).map_err(err)?;
    let oracle = model
        .forward_from(&sae.decode(&sae.encode(&h).map_err(err)?).map_err(err)?)
        .map_err(err)?;
    let got = model.forward_from(&same.steered).map_err(err)?;
    ensure(got == oracle, || {
        "degenerate restoration differs from passthrough logits".into()
    })?;
    Ok(format!(
        "L{layer}: alpha=0, non-expert slots and unl=orig identities hold bitwise"
    ))
}

const SUPPRESSION_CANDIDATES: [&str; 4] = ["random_label", "adv_neg_grad", "finetune", "l1_sparse"];

fn gate_contrast(run: &PipelineOutcome, config: &PipelineConfig, took: Duration) -> Gate {
    let report = &run.report;
    let deepest = config.audit.layers.iter().copied().max().unwrap_or(0);
    let eu_k = config
        .method_specs()
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|s| s.name == MethodName::EuK)
        .ok_or("eu_k not configured")?;
    let reset_from =
        config.model.architecture.num_hidden + 1 - eu_k.hyperparams["k_layers"] as usize;
    ensure(reset_from <= deepest, || {
        format!("eu_k resets layers from {reset_from}, deepest audit layer is {deepest}")
    })?;

    let mut best: Option<(&str, usize, f64)> = None;
    for name in SUPPRESSION_CANDIDATES {
        let Some(m) = report.method(name) else {
            continue;
        };
        for l in &m.audit.layers {
            if l.unlearned_accuracy <= 0.10
                && l.restored_accuracy >= 0.60
                && best.map_or(true, |b| l.restored_accuracy > b.2)
            {
                best = Some((name, l.layer, l.restored_accuracy));
            }
        }
    }
    let (name, layer, restored) = best.ok_or("no suppression-class method restores >= 60%")?;
    let eu = report.method("eu_k").ok_or("eu_k missing from report")?;
    let eu_max = eu.audit.max_restored();
    ensure(
        eu.audit.layers.iter().all(|l| l.restored_accuracy <= 0.10),
        || format!("eu_k restores {:.1}%", 100.0 * eu_max),
    )?;
    let gap = 100.0 * (restored - eu_max);
    ensure(gap >= 30.0, || format!("restoration gap {gap:.1} points"))?;
    ensure(took <= Duration::from_secs(600), || {
        format!("pipeline took {took:.0?}")
    })?;
    Ok(format!(
        "{name} restores {:.1}% at L{layer}; eu_k max {:.1}%; gap {gap:.1} points; pipeline {took:.0?}",
        100.0 * restored,
        100.0 * eu_max
    ))
}

/// Passes outright when persistence is observed; otherwise requires the documented downgrade.
fn gate_persistence(run: &PipelineOutcome) -> (Gate, bool) {
    let Some(p) = &run.report.retrain_persistence else {
        return (Err(format!("{PERSISTENCE_METHOD} not measured")), false);
    };
    let summary = format!(
        "best L{}: unlearned {:.1}%, restored {:.1}%, gain {:.1} points",
        p.best_layer,
        100.0 * p.unlearned_accuracy,
        100.0 * p.restored_accuracy,
        100.0 * p.gain
    );
    if p.observed && p.gain >= PERSISTENCE_MIN_GAIN {
        return (Ok(summary), false);
    }
    let noted = run
        .manifest
        .notes
        .iter()
        .any(|n| n.contains("retrain persistence not observed"));
    if noted {
        (
            Ok(format!(
                "{summary}; recorded as a report field and manifest note"
            )),
            true,
        )
    } else {
        (Err(format!("{summary}; no manifest note")), false)
    }
}

fn gate_reproducible(a: &Path, b: &Path) -> Gate {
    for rel in [REPORT_JSON, REPORT_CSV, REPORT_MD] {
        let x = fs::read(a.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        let y = fs::read(b.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        ensure(x == y, || format!("{rel} differs between runs"))?;
    }
    Ok("report.json, report.csv and report.md are byte-identical".into())
}

// ----------------------------------------------------------------------------
// Driver
// ----------------------------------------------------------------------------

fn main() -> ExitCode {
    let mut lines: Vec<(u8, String)> = Vec::new();
    let mut failed = 0usize;
    let mut report = |id: u8, title: &str, gate: Gate, downgraded: bool| {
        let line = match gate {
            Ok(detail) if downgraded => format!("criterion {id:>2} DOWNGRADED {title}: {detail}"),
            Ok(detail) => format!("criterion {id:>2} PASS {title}: {detail}"),
            Err(why) => {
                failed += 1;
                format!("criterion {id:>2} FAIL {title}: {why}")
            }
        };
        lines.push((id, line));
    };

    report(1, "numerics oracles", gate_numerics(), false);
    report(3, "expert count", gate_expert_count(), false);
    report(4, "feature statistics oracle", gate_feature_stats(), false);
    report(5, "assignment exactness", gate_assignment(), false);

    let config = PipelineConfig::default();
    let dirs = (tempfile::tempdir(), tempfile::tempdir());
    let (Ok(dir_a), Ok(dir_b)) = dirs else {
        println!("criterion  - FAIL setup: cannot create temporary directories");
        return ExitCode::FAILURE;
    };
    let started = Instant::now();
    let first = run_pipeline(&config, dir_a.path());
    let took = started.elapsed();
    let second = run_pipeline(&config, dir_b.path());
    match (&first, &second) {
        (Ok(run), Ok(_)) => {
            report(2, "SAE invariants", gate_sae(run, &config), false);
            report(6, "expert ablation", gate_ablation(&run.report), false);
            report(7, "steering identities", gate_steering(run), false);
            report(
                8,
                "suppression/deletion contrast",
                gate_contrast(run, &config, took),
                false,
            );
            let (gate, downgraded) = gate_persistence(run);
            report(9, "retrain persistence", gate, downgraded);
            report(
                10,
                "reproducibility",
                gate_reproducible(dir_a.path(), dir_b.path()),
                false,
            );
        }
        (Err(e), _) | (_, Err(e)) => {
            for (id, title) in [
                (2, "SAE invariants"),
                (6, "expert ablation"),
                (7, "steering identities"),
                (8, "suppression/deletion contrast"),
                (9, "retrain persistence"),
                (10, "reproducibility"),
            ] {
                report(id, title, Err(format!("pipeline failed: {e}")), false);
            }
        }
    }
    lines.sort_by_key(|&(id, _)| id);
    for (_, line) in &lines {
        println!("{line}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
