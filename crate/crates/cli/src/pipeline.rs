// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end run: data, classifier, unlearning, SAEs, experts, audits, report.
//!
//! Every stage has a key: the digest of its parameters and of the artifacts
//! it reads. A stage whose key matches the manifest and whose files still
//! hash to the recorded digests is reused instead of recomputed. Because
//! every stage is deterministic, recomputing a deleted artifact reproduces
//! the same bytes and downstream keys stay valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, info, warn};
use unlearn_audit::audit::{
    audit_layer, build_report, select_class_experts, train_shared_sae, validate_experts,
    AblationOutcome, AuditReport, ExpertFeatureSet, SaeMode,
};
use unlearn_audit::data::{generate_synthetic, split_forget_retain, Dataset};
use unlearn_audit::model::{train_classifier, Checkpoint};
use unlearn_audit::numerics::Rng;
use unlearn_audit::sae::{train_sae, train_sae_from, SaeModel};
use unlearn_audit::unlearn::{
    forget_retain_accuracy, run_method, MethodCategory, MethodDefaults, UnlearnMethodSpec,
    UnlearnRecord,
};

use crate::config::{PipelineConfig, UnlearnedSaeInit};
use crate::error::{CliError, Result};
use crate::manifest::{
    file_digest, sha256_hex, unix_now, Artifact, RunManifest, StageFailure, StageRecord,
    StageStatus, MANIFEST_FILE, TOOL_VERSION,
};
use crate::render::{render_report, ReportFormat};

/// Method whose restoration is reported as the retrain-persistence check.
pub const PERSISTENCE_METHOD: &str = "retrain";
/// Restored-minus-unlearned gain, in accuracy fraction, that counts as persistence.
pub const PERSISTENCE_MIN_GAIN: f64 = 0.40;

pub const REPORT_JSON: &str = "report/report.json";
pub const REPORT_CSV: &str = "report/report.csv";
pub const REPORT_MD: &str = "report/report.md";

// ----------------------------------------------------------------------------
// Report types
// ----------------------------------------------------------------------------

/// Accuracies of the classifier before unlearning, on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalSummary {
    pub test_accuracy: f64,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
}

/// Expert set of the original model at one layer and the ablation check on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertValidation {
    pub experts: ExpertFeatureSet,
    pub ablation: AblationOutcome,
    pub sae_initial_loss: f64,
    pub sae_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub category: MethodCategory,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    pub failed_unlearning: bool,
    pub audit: AuditReport,
}

/// Whether restoring the retrained model recovers the forget class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainPersistence {
    pub best_layer: usize,
    pub unlearned_accuracy: f64,
    pub restored_accuracy: f64,
    pub gain: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub forget_class: usize,
    pub original: OriginalSummary,
    pub expert_validation: Vec<ExpertValidation>,
    pub methods: Vec<MethodReport>,
    pub retrain_persistence: Option<RetrainPersistence>,
}

impl PipelineReport {
    /// Number of (method, layer) cells.
    pub fn cell_count(&self) -> usize {
        self.methods.iter().map(|m| m.audit.layers.len()).sum()
    }

    pub fn layers(&self) -> Vec<usize> {
        self.methods
            .first()
            .map(|m| m.audit.layers.iter().map(|l| l.layer).collect())
            .unwrap_or_default()
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn retrain_persistence(methods: &[MethodReport]) -> Option<RetrainPersistence> {
    let m = methods.iter().find(|m| m.method == PERSISTENCE_METHOD)?;
    let best = m
        .audit
        .layers
        .iter()
        .max_by(|a, b| a.delta.total_cmp(&b.delta).then(b.layer.cmp(&a.layer)))?;
    Some(RetrainPersistence {
        best_layer: best.layer,
        unlearned_accuracy: best.unlearned_accuracy,
        restored_accuracy: best.restored_accuracy,
        gain: best.delta,
        observed: best.delta >= PERSISTENCE_MIN_GAIN,
    })
}

// ----------------------------------------------------------------------------
// Stage machinery
// ----------------------------------------------------------------------------

fn stage_key(stage: &str, params: serde_json::Value, inputs: &[&str]) -> Result<String> {
    let doc = json!({
        "stage": stage,
        "tool_version": TOOL_VERSION,
        "params": params,
        "inputs": inputs,
    });
    Ok(sha256_hex(&serde_json::to_vec(&doc)?))
}

pub(crate) fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

fn read_file(root: &Path, rel: &str) -> Result<Vec<u8>> {
    let path = root.join(rel);
    std::fs::read(&path).map_err(|e| CliError::io(&path, e))
}

fn write_json<T: Serialize>(root: &Path, rel: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(root, rel, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(root: &Path, rel: &str) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(root, rel)?)?)
}

fn load_dataset(root: &Path, rel: &str) -> Result<Dataset> {
    Ok(Dataset::from_bytes(&read_file(root, rel)?)?)
}

fn load_checkpoint(root: &Path, rel: &str) -> Result<Checkpoint> {
    Ok(Checkpoint::from_bytes(&read_file(root, rel)?)?)
}

fn load_sae(root: &Path, rel: &str) -> Result<SaeModel> {
    Ok(SaeModel::from_bytes(&read_file(root, rel)?)?)
}

struct Runner {
    root: PathBuf,
    manifest: RunManifest,
    touched: Vec<String>,
}

impl Runner {
    fn save_manifest(&mut self) -> Result<()> {
        self.manifest.updated_at = unix_now();
        self.manifest.save(&self.root.join(MANIFEST_FILE))
    }

    fn fail(&mut self, stage: &str, err: CliError) -> CliError {
        warn!(stage, error = %err, "stage failed");
        let now = unix_now();
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                key: String::new(),
                artifacts: Vec::new(),
                status: StageStatus::Failed,
                started_at: now,
                finished_at: now,
            },
        );
        self.manifest.failure = Some(StageFailure {
            stage: stage.to_string(),
            error: err.to_string(),
        });
        if let Err(e) = self.save_manifest() {
            warn!(error = %e, "could not record the failure in the manifest");
        }
        CliError::Stage {
            stage: stage.to_string(),
            source: Box::new(err),
        }
    }

    /// Runs `body` unless the stage is fresh, then records the digests of `outputs`.
    fn stage(
        &mut self,
        name: &str,
        key: String,
        outputs: &[String],
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        self.touched.push(name.to_string());
        if self.manifest.is_fresh(&self.root, name, &key) {
            debug!(stage = name, "reused");
            return Ok(());
        }
        info!(stage = name, "running");
        let started_at = unix_now();
        let produced = body(&self.root).and_then(|()| {
            outputs
                .iter()
                .map(|p| {
                    Ok(Artifact {
                        path: p.clone(),
                        sha256: file_digest(&self.root.join(p))?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        });
        let artifacts = match produced {
            Ok(a) => a,
            Err(e) => return Err(self.fail(name, e)),
        };
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                key,
                artifacts,
                status: StageStatus::Done,
                started_at,
                finished_at: unix_now(),
            },
        );
        self.manifest.executed.push(name.to_string());
        self.save_manifest()
    }

    fn digest(&self, stage: &str, path: &str) -> Result<String> {
        Ok(self.manifest.artifact_digest(stage, path)?.to_string())
    }

    /// Loads an artifact, attributing a failure to `stage`.
    fn load<T>(&mut self, stage: &str, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        match f(&self.root) {
            Ok(v) => Ok(v),
            Err(e) => Err(self.fail(stage, e)),
        }
    }
}

// ----------------------------------------------------------------------------
// Pipeline
// ----------------------------------------------------------------------------

/// Result of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub root: PathBuf,
    pub manifest: RunManifest,
    pub report: PipelineReport,
}

/// Digest of the materialized config, excluding the output location.
pub fn config_digest(config: &PipelineConfig) -> Result<String> {
    let mut c = config.materialize()?;
    c.output_dir = None;
    Ok(sha256_hex(c.to_toml_string()?.as_bytes()))
}

/// Runs every stage under `root`, reusing fresh stages from an existing manifest.
pub fn run_pipeline(config: &PipelineConfig, root: &Path) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut config = config.materialize()?;
    config.output_dir = None;
    let digest = config_digest(&config)?;
    std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;

    let defaults_version = MethodDefaults::builtin().version;
    let manifest_path = root.join(MANIFEST_FILE);
    let mut manifest = match RunManifest::load(&manifest_path) {
        Ok(m) => m,
        Err(e) => {
            if manifest_path.exists() {
                warn!(error = %e, "ignoring unreadable manifest");
            }
            RunManifest::new(digest.clone(), defaults_version)
        }
    };
    manifest.tool_version = TOOL_VERSION.to_string();
    manifest.config_digest = digest.clone();
    manifest.defaults_version = defaults_version;
    manifest.executed.clear();
    manifest.notes.clear();
    manifest.failure = None;

    let mut run = Runner {
        root: root.to_path_buf(),
        manifest,
        touched: Vec::new(),
    };
    let report = execute(&config, &digest, &mut run)?;

    let keep = run.touched.clone();
    run.manifest.stages.retain(|name, _| keep.contains(name));
    match &report.retrain_persistence {
        Some(p) if !p.observed => run.manifest.add_note(format!(
            "retrain persistence not observed: best restoration gain {:.1} points at layer {} (threshold {:.0})",
            100.0 * p.gain,
            p.best_layer,
            100.0 * PERSISTENCE_MIN_GAIN
        )),
        None => run
            .manifest
            .add_note("retrain persistence not measured: retrain not in the method list"),
        Some(_) => {}
    }
    for m in report.methods.iter().filter(|m| m.failed_unlearning) {
        run.manifest.add_note(format!(
            "{} did not meet the unlearning output contract",
            m.method
        ));
    }
    run.save_manifest()?;
    info!(
        executed = run.manifest.executed.len(),
        cells = report.cell_count(),
        "pipeline finished"
    );
    Ok(PipelineOutcome {
        root: root.to_path_buf(),
        manifest: run.manifest,
        report,
    })
}

fn execute(config: &PipelineConfig, digest: &str, run: &mut Runner) -> Result<PipelineReport> {
    let rng = Rng::new(config.seed);
    let c = config.forget_class;
    let layers = config.audit.layers.clone();
    let sae_cfg = config.sae.config.clone();

    // Config
    let config_text = config.to_toml_string()?;
    run.stage(
        "config",
        stage_key("config", json!(digest), &[])?,
        &["config.toml".to_string()],
        |root| write_file(root, "config.toml", config_text.as_bytes()),
    )?;

    // Data
    const TRAIN: &str = "data/train.bin";
    const TEST: &str = "data/test.bin";
    let data_cfg = config.data.clone();
    run.stage(
        "data",
        stage_key("data", json!({"seed": config.seed, "data": data_cfg}), &[])?,
        &[TRAIN.to_string(), TEST.to_string()],
        |root| {
            let (train, test) = generate_synthetic(&data_cfg, &mut rng.fork("data"))?;
            write_file(root, TRAIN, &train.to_bytes()?)?;
            write_file(root, TEST, &test.to_bytes()?)
        },
    )?;
    let train = run.load("data", |r| load_dataset(r, TRAIN))?;
    let test = run.load("data", |r| load_dataset(r, TEST))?;
    let d_train = run.digest("data", TRAIN)?;
    let d_test = run.digest("data", TEST)?;

    // Original classifier
    const MODEL: &str = "model/original.ckpt";
    let model_params = json!({
        "seed": config.seed,
        "architecture": config.model.architecture,
        "train": config.model.train,
    });
    run.stage(
        "model",
        stage_key("model", model_params, &[&d_train, &d_test])?,
        &[MODEL.to_string()],
        |root| {
            let ck = train_classifier(
                &train,
                &test,
                config.model.architecture,
                &config.model.train,
                &mut rng.fork("model"),
            )?;
            write_file(root, MODEL, &ck.to_bytes()?)
        },
    )?;
    let original = run.load("model", |r| load_checkpoint(r, MODEL))?;
    let d_model = run.digest("model", MODEL)?;
    let (forget_accuracy, retain_accuracy) = forget_retain_accuracy(&original.model, &test, c)?;
    let original_summary = OriginalSummary {
        test_accuracy: original.meta.test_accuracy,
        forget_accuracy,
        retain_accuracy,
    };

    // Original SAEs and expert sets
    let mut sae_orig = Vec::with_capacity(layers.len());
    let mut experts = Vec::with_capacity(layers.len());
    let mut validations = Vec::with_capacity(layers.len());
    for &l in &layers {
        let name = format!("sae/original/L{l}");
        let path = format!("{name}.sae");
        run.stage(
            &name,
            stage_key(
                &name,
                json!({"sae": sae_cfg, "layer": l}),
                &[&d_model, &d_train],
            )?,
            std::slice::from_ref(&path),
            |root| {
                let acts = original.model.capture(&train.inputs, l)?;
                let sae = train_sae(&acts, &sae_cfg, "original")?;
                write_file(root, &path, &sae.to_bytes()?)
            },
        )?;
        let sae = run.load(&name, |r| load_sae(r, &path))?;
        let d_sae = run.digest(&name, &path)?;

        let ename = format!("experts/L{l}");
        let epath = format!("{ename}.json");
        let eparams = json!({"forget_class": c, "filter": config.audit.frequency_filter});
        run.stage(
            &ename,
            stage_key(&ename, eparams, &[&d_sae, &d_model, &d_train, &d_test])?,
            std::slice::from_ref(&epath),
            |root| {
                let set = select_class_experts(
                    &original.model,
                    "original",
                    &sae,
                    &train,
                    c,
                    config.audit.frequency_filter,
                )?;
                let ablation = validate_experts(&original.model, &sae, &set, &test, l)?;
                let v = ExpertValidation {
                    experts: set,
                    ablation,
                    sae_initial_loss: sae.initial_loss,
                    sae_final_loss: sae.loss_history.last().copied().unwrap_or(sae.initial_loss),
                };
                write_json(root, &epath, &v)
            },
        )?;
        let v: ExpertValidation = run.load(&ename, |r| read_json(r, &epath))?;
        experts.push((run.digest(&ename, &epath)?, v.experts.clone()));
        validations.push(v);
        sae_orig.push((d_sae, sae));
    }

    // Methods
    let split = split_forget_retain(&train, c)?;
    let mut methods = Vec::new();
    for spec in config.method_specs()? {
        methods.push(audit_method(
            config, run, &rng, &spec, &original, &d_model, &split, &train, &test, &d_train,
            &d_test, &sae_orig, &experts,
        )?);
    }

    // Report
    let report = PipelineReport {
        tool_version: TOOL_VERSION.to_string(),
        config_digest: digest.to_string(),
        seed: config.seed,
        forget_class: c,
        original: original_summary,
        retrain_persistence: retrain_persistence(&methods),
        expert_validation: validations,
        methods,
    };
    let mut inputs: Vec<String> = run
        .manifest
        .stages
        .iter()
        .filter(|(name, _)| {
            run.touched.contains(name) && name.as_str() != "report" && name.as_str() != "config"
        })
        .flat_map(|(_, rec)| rec.artifacts.iter().map(|a| a.sha256.clone()))
        .collect();
    inputs.sort();
    let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let outputs = [REPORT_JSON, REPORT_CSV, REPORT_MD].map(str::to_string);
    run.stage(
        "report",
        stage_key("report", json!(digest), &input_refs)?,
        &outputs,
        |root| {
            write_json(root, REPORT_JSON, &report)?;
            write_file(
                root,
                REPORT_CSV,
                render_report(Some(&report), ReportFormat::Csv)?.as_bytes(),
            )?;
            write_file(
                root,
                REPORT_MD,
                render_report(Some(&report), ReportFormat::Markdown)?.as_bytes(),
            )
        },
    )?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn audit_method(
    config: &PipelineConfig,
    run: &mut Runner,
    rng: &Rng,
    spec: &UnlearnMethodSpec,
    original: &Checkpoint,
    d_model: &str,
    split: &unlearn_audit::data::ForgetRetainSplit,
    train: &Dataset,
    test: &Dataset,
    d_train: &str,
    d_test: &str,
    sae_orig: &[(String, SaeModel)],
    experts: &[(String, ExpertFeatureSet)],
) -> Result<MethodReport> {
    let m = spec.name.as_str();
    let c = config.forget_class;
    let sae_cfg = &config.sae.config;
    let shared = config.audit.sae_mode == SaeMode::Shared;

    let uname = format!("unlearn/{m}");
    let ckpt_path = format!("{uname}.ckpt");
    let rec_path = format!("{uname}.json");
    let uparams = json!({
        "seed": config.seed,
        "forget_class": c,
        "method": m,
        "hyperparams": spec.hyperparams,
    });
    run.stage(
        &uname,
        stage_key(&uname, uparams, &[d_model, d_train, d_test])?,
        &[ckpt_path.clone(), rec_path.clone()],
        |root| {
            let result = run_method(spec, original, split, test, &mut rng.fork(&uname))?;
            write_file(root, &ckpt_path, &result.model.to_bytes()?)?;
            write_json(root, &rec_path, &result.record())
        },
    )?;
    let unlearned = run.load(&uname, |r| load_checkpoint(r, &ckpt_path))?;
    let record: UnlearnRecord = run.load(&uname, |r| read_json(r, &rec_path))?;
    let d_unl = run.digest(&uname, &ckpt_path)?;

    let mut sae_unl = Vec::with_capacity(sae_orig.len());
    for ((d_so, so), &l) in sae_orig.iter().zip(&config.audit.layers) {
        let name = format!("sae/{m}/L{l}");
        let path = format!("{name}.sae");
        let (params, inputs): (_, Vec<&str>) = if shared {
            (
                json!({"sae": sae_cfg, "layer": l, "mode": "shared"}),
                vec![d_model, &d_unl, d_train],
            )
        } else {
            match config.sae.unlearned_init {
                UnlearnedSaeInit::WarmStart => (
                    json!({"sae": sae_cfg, "layer": l, "init": "warm-start"}),
                    vec![&d_unl, d_train, d_so.as_str()],
                ),
                UnlearnedSaeInit::Fresh => (
                    json!({"sae": sae_cfg, "layer": l, "init": "fresh"}),
                    vec![&d_unl, d_train],
                ),
            }
        };
        run.stage(
            &name,
            stage_key(&name, params, &inputs)?,
            std::slice::from_ref(&path),
            |root| {
                let sae = if shared {
                    train_shared_sae(&original.model, &unlearned.model, &train.inputs, l, sae_cfg)?
                } else {
                    let acts = unlearned.model.capture(&train.inputs, l)?;
                    match config.sae.unlearned_init {
                        UnlearnedSaeInit::WarmStart => train_sae_from(so, &acts, sae_cfg, m)?,
                        UnlearnedSaeInit::Fresh => train_sae(&acts, sae_cfg, m)?,
                    }
                };
                write_file(root, &path, &sae.to_bytes()?)
            },
        )?;
        let sae = run.load(&name, |r| load_sae(r, &path))?;
        sae_unl.push((run.digest(&name, &path)?, sae));
    }

    let aname = format!("audit/{m}");
    let apath = format!("{aname}.json");
    let mut inputs: Vec<&str> = vec![d_model, &d_unl, d_train, d_test];
    for ((a, _), ((b, _), (e, _))) in sae_orig.iter().zip(sae_unl.iter().zip(experts)) {
        inputs.extend([a.as_str(), b.as_str(), e.as_str()]);
    }
    let aparams = json!({"forget_class": c, "audit": config.audit, "method": m});
    run.stage(
        &aname,
        stage_key(&aname, aparams, &inputs)?,
        std::slice::from_ref(&apath),
        |root| {
            let mut rows = Vec::with_capacity(sae_orig.len());
            for (((_, so), (_, su)), (_, ex)) in sae_orig.iter().zip(&sae_unl).zip(experts) {
                let row = if shared {
                    let ex = select_class_experts(
                        &original.model,
                        "original",
                        su,
                        train,
                        c,
                        config.audit.frequency_filter,
                    )?;
                    audit_layer(
                        &original.model,
                        &unlearned.model,
                        su,
                        su,
                        &ex,
                        &config.audit,
                        test,
                        Some(train),
                    )?
                } else {
                    audit_layer(
                        &original.model,
                        &unlearned.model,
                        so,
                        su,
                        ex,
                        &config.audit,
                        test,
                        Some(train),
                    )?
                };
                rows.push(row);
            }
            let report = build_report(m, spec.category, c, &config.audit, rows);
            write_json(root, &apath, &report)
        },
    )?;
    let audit: AuditReport = run.load(&aname, |r| read_json(r, &apath))?;
    Ok(MethodReport {
        method: m.to_string(),
        category: record.category,
        forget_accuracy: record.forget_accuracy,
        retain_accuracy: record.retain_accuracy,
        failed_unlearning: record.failed_unlearning,
        audit,
    })
}

/// Loads the report of a finished run from its manifest, if the report stage completed.
pub fn load_report(root: &Path, manifest: &RunManifest) -> Result<Option<PipelineReport>> {
    match manifest.stages.get("report") {
        Some(rec) if rec.status == StageStatus::Done => {
            let digest = manifest.artifact_digest("report", REPORT_JSON)?;
            let bytes = read_file(root, REPORT_JSON)?;
            if sha256_hex(&bytes) != digest {
                return Err(CliError::Manifest(format!(
                    "{REPORT_JSON} does not match the manifest digest"
                )));
            }
            Ok(Some(serde_json::from_slice(&bytes)?))
        }
        _ => Ok(None),
    }
}
