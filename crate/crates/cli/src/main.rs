// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;
use unlearn_audit::audit::{
    audit_layer, build_report, select_class_experts, AuditConfig, MatchCost,
};
use unlearn_audit::data::{generate_synthetic, split_forget_retain, Dataset, SyntheticConfig};
use unlearn_audit::model::{
    per_class_accuracy, train_classifier, Architecture, Checkpoint, TrainConfig,
};
use unlearn_audit::numerics::Rng;
use unlearn_audit::sae::{train_sae, train_sae_from, SaeConfig, SaeModel};
use unlearn_audit::unlearn::{forget_retain_accuracy, run_method, MethodName, UnlearnMethodSpec};
use unlearn_audit_cli::error::{CliError, Result};
use unlearn_audit_cli::{
    render_audits, render_manifest, run_pipeline, PipelineConfig, ReportFormat, RunManifest,
    EXIT_CONFIG, EXIT_OK,
};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "UNLEARN_AUDIT_OUT";
const DEFAULT_OUT: &str = "unlearn-audit-out";

#[derive(Debug, Parser)]
#[command(
    name = "unlearn-audit",
    version,
    about = "Suppression-or-deletion audit of unlearned classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic dataset generation.
    #[command(subcommand)]
    Data(DataCmd),
    /// Classifier training and evaluation.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Unlearning methods.
    #[command(subcommand)]
    Unlearn(UnlearnCmd),
    /// Sparse autoencoders.
    #[command(subcommand)]
    Sae(SaeCmd),
    /// Restoration audit of one unlearned model.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Full staged run from a config file.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Report rendering.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
enum DataCmd {
    /// Writes train.bin and test.bin into a directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        num_classes: usize,
        #[arg(long, default_value_t = 500)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 32)]
        d_in: usize,
        #[arg(long, default_value_t = 6.0)]
        class_separation: f64,
        #[arg(long, default_value_t = 1.0)]
        intra_noise: f64,
    },
}

#[derive(Debug, Args)]
struct DataArg {
    /// Directory holding train.bin and test.bin.
    #[arg(long)]
    data: PathBuf,
}

impl DataArg {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            Dataset::load(&self.data.join("train.bin"))?,
            Dataset::load(&self.data.join("test.bin"))?,
        ))
    }
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Trains the classifier.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 6)]
        num_hidden: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.02)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
    },
    /// Prints overall and per-class test accuracy as JSON.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum UnlearnCmd {
    /// Applies one method and writes a checkpoint plus `<out>.json`.
    Run {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        forget_class: usize,
        /// Hyperparameter override, `key=value`; repeatable.
        #[arg(long = "set", value_parser = parse_kv)]
        overrides: Vec<(String, f64)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// SAE settings; unset flags keep the library defaults.
#[derive(Debug, Args)]
struct SaeArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sae_epochs: Option<usize>,
    #[arg(long)]
    sae_lr: Option<f64>,
    #[arg(long)]
    sae_seed: Option<u64>,
}

impl SaeArgs {
    fn config(&self, d: usize) -> SaeConfig {
        let base = SaeConfig::default();
        SaeConfig {
            d,
            m: self.m.unwrap_or(base.m),
            k: self.k.unwrap_or(base.k),
            epochs: self.sae_epochs.unwrap_or(base.epochs),
            lr: self.sae_lr.unwrap_or(base.lr),
            seed: self.sae_seed.unwrap_or(base.seed),
            ..base
        }
    }
}

#[derive(Debug, Subcommand)]
enum SaeCmd {
    /// Trains an SAE on one hidden layer of a classifier.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        /// Continue from this SAE instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        sae: SaeArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum AuditCmd {
    /// Trains layer SAEs, selects experts and measures restoration.
    Run {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        unlearned: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        #[arg(long)]
        forget_class: usize,
        /// Matching cost: decoder-cosine or activation-correlation.
        #[arg(long, default_value = "decoder-cosine")]
        match_cost: String,
        #[command(flatten)]
        sae: SaeArgs,
        /// Directory for audit.json and audit.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum PipelineCmd {
    /// Runs every stage, reusing stages whose inputs are unchanged.
    Run {
        /// Pipeline config (TOML). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory; defaults to $UNLEARN_AUDIT_OUT, then the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    /// Prints the report table of a finished run.
    Render {
        /// Run directory holding manifest.json; defaults to $UNLEARN_AUDIT_OUT.
        #[arg(long)]
        run: Option<PathBuf>,
        /// csv, json or markdown.
        #[arg(long, default_value = "markdown")]
        format: String,
    },
}

fn parse_kv(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ----------------------------------------------------------------------------
// Commands
// ----------------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data(DataCmd::Gen {
            out,
            seed,
            num_classes,
            samples_per_class,
            d_in,
            class_separation,
            intra_noise,
        }) => {
            let cfg = SyntheticConfig {
                num_classes,
                samples_per_class,
                d_in,
                class_separation,
                intra_noise,
            };
            let (train, test) = generate_synthetic(&cfg, &mut Rng::new(seed).fork("data"))?;
            create_dir(&out)?;
            train.save(&out.join("train.bin"))?;
            test.save(&out.join("test.bin"))?;
            info!(train = train.len(), test = test.len(), "dataset written");
        }
        Command::Model(ModelCmd::Train {
            data,
            out,
            seed,
            hidden_dim,
            num_hidden,
            epochs,
            lr,
            momentum,
            batch_size,
            l2,
        }) => {
            let (train, test) = data.load()?;
            let arch = Architecture {
                input_dim: train.input_dim(),
                hidden_dim,
                num_hidden,
                num_classes: train.num_classes,
            };
            let cfg = TrainConfig {
                epochs,
                lr,
                momentum,
                batch_size,
                l2,
            };
            let ck =
                train_classifier(&train, &test, arch, &cfg, &mut Rng::new(seed).fork("model"))?;
            ck.save(&out)?;
            info!(test_accuracy = ck.meta.test_accuracy, "checkpoint written");
        }
        Command::Model(ModelCmd::Eval { data, model }) => {
            let (_, test) = data.load()?;
            let ck = Checkpoint::load(&model)?;
            let doc = serde_json::json!({
                "id": ck.meta.id,
                "test_accuracy": ck.model.accuracy(&test)?,
                "per_class": per_class_accuracy(&ck.model, &test)?,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Unlearn(UnlearnCmd::Run {
            data,
            model,
            method,
            forget_class,
            overrides,
            out,
            seed,
        }) => {
            let (train, test) = data.load()?;
            let name: MethodName = method.parse()?;
            let overrides: BTreeMap<String, f64> = overrides.into_iter().collect();
            let spec = UnlearnMethodSpec::new(name, &overrides)?;
            let original = Checkpoint::load(&model)?;
            let split = split_forget_retain(&train, forget_class)?;
            let tag = format!("unlearn/{}", name.as_str());
            let result = run_method(
                &spec,
                &original,
                &split,
                &test,
                &mut Rng::new(seed).fork(&tag),
            )?;
            result.model.save(&out)?;
            let record = serde_json::to_string_pretty(&result.record())?;
            write_text(&out.with_extension("json"), &format!("{record}\n"))?;
            println!("{record}");
        }
        Command::Sae(SaeCmd::Train {
            data,
            model,
            layer,
            init,
            sae,
            out,
        }) => {
            let (train, _) = data.load()?;
            let ck = Checkpoint::load(&model)?;
            let acts = ck.model.capture(&train.inputs, layer)?;
            let trained = match init {
                Some(path) => {
                    let base = SaeModel::load(&path)?;
                    train_sae_from(&base, &acts, &base.config.clone(), &ck.meta.id)?
                }
                None => train_sae(&acts, &sae.config(acts.values.cols()), &ck.meta.id)?,
            };
            trained.save(&out)?;
            info!(
                initial = trained.initial_loss,
                last = trained.loss_history.last().copied(),
                "sae written"
            );
        }
        Command::Audit(AuditCmd::Run {
            data,
            original,
            unlearned,
            layers,
            alpha,
            forget_class,
            match_cost,
            sae,
            out,
        }) => {
            let (train, test) = data.load()?;
            let orig = Checkpoint::load(&original)?;
            let unl = Checkpoint::load(&unlearned)?;
            let match_cost = match match_cost.as_str() {
                "decoder-cosine" => MatchCost::DecoderCosine,
                "activation-correlation" => MatchCost::ActivationCorrelation,
                other => return Err(CliError::Config(format!("unknown match cost `{other}`"))),
            };
            let cfg = AuditConfig {
                layers,
                alpha,
                match_cost,
                ..AuditConfig::default()
            };
            cfg.validate(orig.model.num_hidden())?;
            if forget_class >= train.num_classes {
                return Err(CliError::Config(format!(
                    "forget class {forget_class} out of range"
                )));
            }
            let name: MethodName = unl.meta.id.parse()?;
            let (forget_acc, _) = forget_retain_accuracy(&unl.model, &test, forget_class)?;
            info!(method = name.as_str(), forget_acc, "auditing");
            let mut rows = Vec::new();
            for &l in &cfg.layers {
                let sae_cfg = sae.config(orig.model.architecture().hidden_dim);
                let so = train_sae(&orig.model.capture(&train.inputs, l)?, &sae_cfg, "original")?;
                let su = train_sae_from(
                    &so,
                    &unl.model.capture(&train.inputs, l)?,
                    &sae_cfg,
                    name.as_str(),
                )?;
                let experts = select_class_experts(
                    &orig.model,
                    "original",
                    &so,
                    &train,
                    forget_class,
                    cfg.frequency_filter,
                )?;
                rows.push(audit_layer(
                    &orig.model,
                    &unl.model,
                    &so,
                    &su,
                    &experts,
                    &cfg,
                    &test,
                    Some(&train),
                )?);
            }
            let report = build_report(name.as_str(), name.category(), forget_class, &cfg, rows);
            create_dir(&out)?;
            let json = serde_json::to_string_pretty(&[&report])?;
            write_text(&out.join("audit.json"), &format!("{json}\n"))?;
            let table = render_audits(std::slice::from_ref(&report), ReportFormat::Csv)?;
            write_text(&out.join("audit.csv"), &table)?;
            print!("{}", render_audits(&[report], ReportFormat::Markdown)?);
        }
        Command::Pipeline(PipelineCmd::Run { config, out, seed }) => {
            let mut cfg = match &config {
                Some(path) => PipelineConfig::load(path)?,
                None => PipelineConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let root = out
                .or_else(env_out)
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let outcome = run_pipeline(&cfg, &root)?;
            for note in &outcome.manifest.notes {
                info!(%note, "manifest note");
            }
            print!(
                "{}",
                unlearn_audit_cli::render_report(Some(&outcome.report), ReportFormat::Markdown)?
            );
        }
        Command::Report(ReportCmd::Render { run, format }) => {
            let format: ReportFormat = format.parse()?;
            let root = run
                .or_else(env_out)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let manifest =
                RunManifest::load(&root.join(unlearn_audit_cli::manifest::MANIFEST_FILE))?;
            print!("{}", render_manifest(&root, &manifest, format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_CONFIG as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
