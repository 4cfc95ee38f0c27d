// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline configuration file.
//!
//! ```toml
//! version = 1
//! seed = 0
//! forget_class = 2
//!
//! [audit]
//! layers = [3, 4, 5]
//! alpha = 10.0
//!
//! [[methods]]
//! name = "eu_k"
//! hyperparams = { k_layers = 2 }
//! ```
//!
//! Every section is optional except `version`. [`PipelineConfig::materialize`]
//! fills in method hyperparameter defaults so a written config is complete.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unlearn_audit::audit::{AuditConfig, MatchCost, SaeMode};
use unlearn_audit::data::SyntheticConfig;
use unlearn_audit::model::{Architecture, TrainConfig};
use unlearn_audit::sae::SaeConfig;
use unlearn_audit::unlearn::{MethodName, UnlearnMethodSpec};

use crate::error::{CliError, Result};

/// The only configuration format version this build reads.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_forget_class")]
    pub forget_class: usize,
    /// Overrides the output root when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: SyntheticConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sae: SaeSection,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub train: TrainConfig,
}

/// How the SAE of an unlearned model is initialized in separate-SAE mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlearnedSaeInit {
    /// Start from the original model's SAE at the same layer.
    #[default]
    WarmStart,
    /// Independent initialization from the SAE seed.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSection {
    pub config: SaeConfig,
    pub unlearned_init: UnlearnedSaeInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub name: String,
    /// Overrides on top of the built-in defaults.
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
}

fn default_forget_class() -> usize {
    2
}

fn default_methods() -> Vec<MethodEntry> {
    MethodName::ALL
        .iter()
        .map(|m| MethodEntry {
            name: m.as_str().to_string(),
            hyperparams: BTreeMap::new(),
        })
        .collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            forget_class: default_forget_class(),
            output_dir: None,
            data: SyntheticConfig::default(),
            model: ModelSection::default(),
            sae: SaeSection::default(),
            audit: AuditConfig::default(),
            methods: default_methods(),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Resolved method specs in config order.
    pub fn method_specs(&self) -> Result<Vec<UnlearnMethodSpec>> {
        self.methods
            .iter()
            .map(|m| {
                let name: MethodName = m.name.parse()?;
                Ok(UnlearnMethodSpec::new(name, &m.hyperparams)?)
            })
            .collect()
    }

    /// Copy with every method's hyperparameters fully spelled out.
    pub fn materialize(&self) -> Result<Self> {
        let mut out = self.clone();
        out.methods = self
            .method_specs()?
            .into_iter()
            .map(|s| MethodEntry {
                name: s.name.as_str().to_string(),
                hyperparams: s.hyperparams,
            })
            .collect();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return config_err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        self.data.validate()?;
        let arch = &self.model.architecture;
        arch.validate()?;
        self.model.train.validate()?;
        if arch.input_dim != self.data.d_in || arch.num_classes != self.data.num_classes {
            return config_err("model architecture does not match the data dimensions");
        }
        if self.forget_class >= self.data.num_classes {
            return config_err(format!(
                "forget_class {} outside [0, {})",
                self.forget_class, self.data.num_classes
            ));
        }
        self.sae.config.validate()?;
        if self.sae.config.d != arch.hidden_dim {
            return config_err(format!(
                "sae.config.d = {} but hidden layers have width {}",
                self.sae.config.d, arch.hidden_dim
            ));
        }
        self.audit.validate(arch.num_hidden)?;
        if self.audit.sae_mode == SaeMode::Separate && self.audit.match_cost == MatchCost::Identity
        {
            return config_err(
                "separate-SAE mode needs a decoder-cosine or activation-correlation matching",
            );
        }
        if self.methods.is_empty() {
            return config_err("no unlearning methods configured");
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m.name.as_str()) {
                return config_err(format!("method `{}` listed twice", m.name));
            }
        }
        for spec in self.method_specs()? {
            if let Some(&k) = spec.hyperparams.get("k_layers") {
                if k as usize > arch.num_hidden {
                    return config_err(format!(
                        "{}: k_layers = {k} exceeds the {} hidden layers",
                        spec.name.as_str(),
                        arch.num_hidden
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = PipelineConfig::from_toml_str("version = 1\n").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.methods.len(), 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default().materialize().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "",
            "version = 2",
            "version = 1\nforget_class = 10",
            "version = 1\n[audit]\nlayers = [0]",
            "version = 1\n[audit]\nlayers = [7]",
            "version = 1\nunknown = 3",
            "version = 1\n[[methods]]\nname = \"scrub\"",
            "version = 1\n[[methods]]\nname = \"eu_k\"\nhyperparams = { k_layers = 7 }",
            "version = 1\n[[methods]]\nname = \"eu_k\"\n[[methods]]\nname = \"eu_k\"",
            "version = 1\n[[methods]]\nname = \"retrain\"\nhyperparams = { epochs = 0 }",
            "version = 1\n[data]\nclass_separation = nan",
            "version = 1\n[data]\nintra_noise = -1.0",
            "version = 1\n[audit]\nalpha = inf",
            "version = 1\n[audit.thresholds]\nunlearned_max = nan",
            "version = 1\n[audit.frequency_filter]\nlo = 0.5\nhi = 0.2",
            "version = 1\n[sae.config]\nlr = nan",
        ] {
            let err = PipelineConfig::from_toml_str(text);
            assert!(err.is_err(), "accepted: {text}");
            assert_eq!(err.unwrap_err().exit_code(), crate::error::EXIT_CONFIG);
        }
    }
}
