// SPDX-License-Identifier: MIT OR Apache-2.0

//! Registry of class-wise unlearning methods.
//!
//! Every method maps an original checkpoint and a forget/retain split to an
//! unlearned checkpoint with the same architecture. Hyperparameters are
//! plain `name → f64` maps validated against a per-method rule table, with
//! defaults taken from a versioned TOML file compiled into the crate.

mod methods;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::data::{Dataset, ForgetRetainSplit};
use crate::error::{config_err, AuditError, Result};
use crate::model::{Checkpoint, CheckpointMeta};
use crate::numerics::Rng;

pub use methods::{diagonal_fisher, HARD_THRESHOLD};

/// Source of the default hyperparameters.
pub const DEFAULTS_TOML: &str = include_str!("defaults.toml");

// ----------------------------------------------------------------------------
// Method identity
// ----------------------------------------------------------------------------

/// How a method changes the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodCategory {
    /// Works through the training loss or outputs.
    OutputLevel,
    /// Resets, freezes or dampens specific parameters.
    Structural,
}

impl fmt::Display for MethodCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodCategory::OutputLevel => "output-level",
            MethodCategory::Structural => "structural",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Retrain,
    Finetune,
    RandomLabel,
    AdvNegGrad,
    CfK,
    EuK,
    L1Sparse,
    FisherDampen,
}

impl MethodName {
    pub const ALL: [MethodName; 8] = [
        MethodName::Retrain,
        MethodName::Finetune,
        MethodName::RandomLabel,
        MethodName::AdvNegGrad,
        MethodName::CfK,
        MethodName::EuK,
        MethodName::L1Sparse,
        MethodName::FisherDampen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Retrain => "retrain",
            MethodName::Finetune => "finetune",
            MethodName::RandomLabel => "random_label",
            MethodName::AdvNegGrad => "adv_neg_grad",
            MethodName::CfK => "cf_k",
            MethodName::EuK => "eu_k",
            MethodName::L1Sparse => "l1_sparse",
            MethodName::FisherDampen => "fisher_dampen",
        }
    }

    pub fn category(self) -> MethodCategory {
        match self {
            MethodName::CfK | MethodName::EuK | MethodName::FisherDampen => {
                MethodCategory::Structural
            }
            _ => MethodCategory::OutputLevel,
        }
    }

    fn rules(self) -> &'static [Rule] {
        use MethodName::*;
        const PLAIN: &[Rule] = &[EPOCHS, LR, MOMENTUM, BATCH, L2];
        const RELABEL: &[Rule] = &[EPOCHS, LR, MOMENTUM, BATCH];
        const ADV: &[Rule] = &[
            EPOCHS,
            Rule::positive("ascent_lr"),
            Rule::positive("descent_lr"),
            MOMENTUM,
            BATCH,
            Rule::positive("max_forget_loss"),
        ];
        const FROZEN: &[Rule] = &[K_LAYERS, EPOCHS, LR, MOMENTUM, BATCH, L2];
        const RESET: &[Rule] = &[K_LAYERS, EPOCHS, LR, MOMENTUM, BATCH];
        const L1: &[Rule] = &[
            EPOCHS,
            LR,
            MOMENTUM,
            BATCH,
            Rule::non_negative("l1_weight"),
            Rule::non_negative("threshold"),
        ];
        const FISHER: &[Rule] = &[
            Rule {
                key: "dampening_constant",
                min: 0.0,
                max: 1.0,
                integer: false,
                min_open: false,
            },
            Rule::positive("selection_ratio"),
        ];
        match self {
            Retrain | Finetune => PLAIN,
            RandomLabel => RELABEL,
            AdvNegGrad => ADV,
            CfK => FROZEN,
            EuK => RESET,
            L1Sparse => L1,
            FisherDampen => FISHER,
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AuditError::Config(format!("unknown unlearning method `{s}`")))
    }
}

// ----------------------------------------------------------------------------
// Hyperparameter rules
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Rule {
    key: &'static str,
    min: f64,
    max: f64,
    integer: bool,
    /// Excludes `min` itself.
    min_open: bool,
}

impl Rule {
    const fn positive(key: &'static str) -> Self {
        Rule {
            key,
            min: 0.0,
            max: f64::INFINITY,
            integer: false,
            min_open: true,
        }
    }

    const fn non_negative(key: &'static str) -> Self {
        Rule {
            key,
            min: 0.0,
            max: f64::INFINITY,
            integer: false,
            min_open: false,
        }
    }

    const fn count(key: &'static str, min: f64) -> Self {
        Rule {
            key,
            min,
            max: 1e9,
            integer: true,
            min_open: false,
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        let below = if self.min_open {
            v <= self.min
        } else {
            v < self.min
        };
        if !v.is_finite() || below || v > self.max || (self.integer && v.fract() != 0.0) {
            let kind = if self.integer {
                "an integer"
            } else {
                "a number"
            };
            let open = if self.min_open { "(" } else { "[" };
            return config_err(format!(
                "hyperparameter `{}` = {v} must be {kind} in {open}{}, {}]",
                self.key, self.min, self.max
            ));
        }
        Ok(())
    }
}

const EPOCHS: Rule = Rule::count("epochs", 1.0);
const BATCH: Rule = Rule::count("batch_size", 1.0);
const K_LAYERS: Rule = Rule::count("k_layers", 0.0);
const LR: Rule = Rule::positive("lr");
const L2: Rule = Rule::non_negative("l2");
const MOMENTUM: Rule = Rule {
    key: "momentum",
    min: 0.0,
    max: 0.999,
    integer: false,
    min_open: false,
};

/// Parsed defaults file.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDefaults {
    pub version: u32,
    pub methods: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MethodDefaults {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| AuditError::Config(format!("defaults file: {e}")))?;
        let mut version = None;
        let mut methods = BTreeMap::new();
        for (key, value) in table {
            match (key.as_str(), value) {
                ("version", toml::Value::Integer(v)) if v > 0 => {
                    version =
                        Some(u32::try_from(v).map_err(|_| {
                            AuditError::Config("defaults version out of range".into())
                        })?)
                }
                (name, toml::Value::Table(t)) => {
                    let method: MethodName = name.parse()?;
                    let mut params = BTreeMap::new();
                    for (k, v) in t {
                        let x = match v {
                            toml::Value::Integer(i) => i as f64,
                            toml::Value::Float(f) => f,
                            other => {
                                return config_err(format!(
                                    "{name}.{k}: expected a number, got {}",
                                    other.type_str()
                                ))
                            }
                        };
                        params.insert(k, x);
                    }
                    validate_params(method, &params)?;
                    methods.insert(name.to_string(), params);
                }
                (other, _) => {
                    return config_err(format!("defaults file: unexpected key `{other}`"))
                }
            }
        }
        let Some(version) = version else {
            return config_err("defaults file has no positive integer `version`");
        };
        for m in MethodName::ALL {
            if !methods.contains_key(m.as_str()) {
                return config_err(format!("defaults file has no section for `{m}`"));
            }
        }
        Ok(Self { version, methods })
    }

    /// The compiled-in defaults.
    pub fn builtin() -> &'static MethodDefaults {
        static CELL: OnceLock<MethodDefaults> = OnceLock::new();
        CELL.get_or_init(|| MethodDefaults::parse(DEFAULTS_TOML).expect("builtin defaults parse"))
    }

    pub fn for_method(&self, name: MethodName) -> &BTreeMap<String, f64> {
        &self.methods[name.as_str()]
    }
}

fn validate_params(name: MethodName, params: &BTreeMap<String, f64>) -> Result<()> {
    let rules = name.rules();
    for key in params.keys() {
        if !rules.iter().any(|r| r.key == key) {
            return config_err(format!("`{name}` has no hyperparameter `{key}`"));
        }
    }
    for rule in rules {
        match params.get(rule.key) {
            Some(&v) => rule.check(v)?,
            None => {
                return config_err(format!("`{name}` is missing hyperparameter `{}`", rule.key))
            }
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// Specs and results
// ----------------------------------------------------------------------------

/// A method plus fully resolved hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnMethodSpec {
    pub name: MethodName,
    pub hyperparams: BTreeMap<String, f64>,
    pub category: MethodCategory,
}

impl UnlearnMethodSpec {
    pub fn with_defaults(name: MethodName) -> Self {
        Self {
            name,
            hyperparams: MethodDefaults::builtin().for_method(name).clone(),
            category: name.category(),
        }
    }

    /// Defaults overlaid with `overrides`; unknown keys and out-of-range values are rejected.
    pub fn new(name: MethodName, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut spec = Self::with_defaults(name);
        spec.hyperparams
            .extend(overrides.iter().map(|(k, &v)| (k.clone(), v)));
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.category != self.name.category() {
            return config_err(format!("`{}` is not a {} method", self.name, self.category));
        }
        validate_params(self.name, &self.hyperparams)
    }

    pub(crate) fn get(&self, key: &str) -> f64 {
        self.hyperparams[key]
    }

    pub(crate) fn get_usize(&self, key: &str) -> usize {
        self.hyperparams[key] as usize
    }
}

/// Largest forget-class accuracy for a run to count as unlearned.
pub const FORGET_ACCURACY_MAX: f64 = 0.10;
/// Largest allowed fall in retain accuracy relative to the original.
pub const RETAIN_ACCURACY_SLACK: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnResult {
    pub spec: UnlearnMethodSpec,
    pub model: Checkpoint,
    /// Test-split accuracy on the forget class.
    pub forget_accuracy: f64,
    /// Test-split accuracy on the other classes.
    pub retain_accuracy: f64,
    pub original_retain_accuracy: f64,
    pub wall_time: f64,
}

impl UnlearnResult {
    /// True when the forget class is gone and retain accuracy held up.
    pub fn meets_output_contract(&self) -> bool {
        self.forget_accuracy <= FORGET_ACCURACY_MAX
            && self.retain_accuracy >= self.original_retain_accuracy - RETAIN_ACCURACY_SLACK
    }

    pub fn record(&self) -> UnlearnRecord {
        UnlearnRecord {
            method: self.spec.name,
            category: self.spec.category,
            hyperparams: self.spec.hyperparams.clone(),
            forget_accuracy: self.forget_accuracy,
            retain_accuracy: self.retain_accuracy,
            original_retain_accuracy: self.original_retain_accuracy,
            failed_unlearning: !self.meets_output_contract(),
            wall_time: self.wall_time,
        }
    }
}

/// Serializable summary of an [`UnlearnResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub method: MethodName,
    pub category: MethodCategory,
    pub hyperparams: BTreeMap<String, f64>,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    pub original_retain_accuracy: f64,
    pub failed_unlearning: bool,
    pub wall_time: f64,
}

/// Accuracy on the forget class and on the rest of `test`.
pub fn forget_retain_accuracy(
    model: &crate::model::LayeredClassifier,
    test: &Dataset,
    forget_class: usize,
) -> Result<(f64, f64)> {
    let pred = model.predict(&test.inputs)?;
    let (mut fh, mut fn_, mut rh, mut rn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in pred.iter().zip(&test.labels) {
        if y == forget_class {
            fn_ += 1;
            fh += usize::from(p == y);
        } else {
            rn += 1;
            rh += usize::from(p == y);
        }
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok((frac(fh, fn_), frac(rh, rn)))
}

/// Runs `spec` on `original` and scores the result on `test`.
pub fn run_method(
    spec: &UnlearnMethodSpec,
    original: &Checkpoint,
    split: &ForgetRetainSplit,
    test: &Dataset,
    rng: &mut Rng,
) -> Result<UnlearnResult> {
    spec.validate()?;
    let c = split.forget_class;
    if c >= test.num_classes || split.retain.is_empty() || split.forget.is_empty() {
        return config_err("forget/retain split is empty or does not match the test set");
    }
    let seed = rng.seed();
    let started = Instant::now();
    let model = methods::dispatch(spec, &original.model, split, rng)?;
    let wall_time = started.elapsed().as_secs_f64();
    let (forget_accuracy, retain_accuracy) = forget_retain_accuracy(&model, test, c)?;
    let (_, original_retain_accuracy) = forget_retain_accuracy(&original.model, test, c)?;
    let train_accuracy = {
        let mut n = split.forget.len() + split.retain.len();
        n = n.max(1);
        let hits = |ds: &Dataset| -> Result<usize> {
            let pred = model.predict(&ds.inputs)?;
            Ok(pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count())
        };
        (hits(&split.forget)? + hits(&split.retain)?) as f64 / n as f64
    };
    let meta = CheckpointMeta {
        id: spec.name.as_str().to_string(),
        seed,
        epochs: spec.hyperparams.get("epochs").map_or(0, |&e| e as usize),
        train_accuracy,
        test_accuracy: model.accuracy(test)?,
    };
    let result = UnlearnResult {
        spec: spec.clone(),
        model: Checkpoint { model, meta },
        forget_accuracy,
        retain_accuracy,
        original_retain_accuracy,
        wall_time,
    };
    if result.meets_output_contract() {
        info!(method = %spec.name, forget_accuracy, retain_accuracy, "unlearning finished");
    } else {
        warn!(method = %spec.name, forget_accuracy, retain_accuracy, "failed unlearning");
    }
    Ok(result)
}
