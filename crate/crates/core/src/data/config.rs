//! Experiment configuration files (TOML).
//!
//! Every section is optional and falls back to the defaults documented in
//! `configs/defaults.toml`; only `version` is required. Unknown keys are
//! rejected with their full path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cifar::load_cifar10;
use super::synth::synth_dataset;
use super::{Dataset, Split};
use crate::attack::AttackConfig;
use crate::error::{io_err, CoreError, Result};
use crate::model::{matched_expert_width, ModelConfig, ModelKind};
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// Seed of single runs; experiments use `experiment.seeds`.
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// Evaluation attack, and the inner attack of adversarial training
    /// unless `train.adversarial` overrides it.
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Base width of the standard network.
    pub width: usize,
    /// Width of each class expert; parameter-matched to `width` when absent.
    pub expert_width: Option<usize>,
    /// Gated experts and how many run per sample.
    pub experts: usize,
    pub top_k: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Standard,
            width: 6,
            expert_width: None,
            experts: 4,
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `synth` or `cifar10:<directory>`.
    pub source: String,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub num_classes: usize,
    /// Synthetic data seed; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synth".into(),
            image_size: 32,
            train_per_class: 500,
            test_per_class: 100,
            num_classes: 10,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Corruption stream seed; the run seed when absent.
    pub corruption_seed: Option<u64>,
    /// Severity manifest file; the built-in one when absent.
    pub manifest: Option<PathBuf>,
    /// Evaluate accuracy under the `[attack]` section.
    pub robust: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            corruption_seed: None,
            manifest: None,
            robust: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    /// Also train adversarial MoCSE (the fourth cell of the matrix).
    pub mocse_adversarial: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            mocse_adversarial: false,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            model: ModelSection::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

fn config_err(key: impl Into<String>, msg: impl Into<String>) -> CoreError {
    CoreError::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| config_err("", e.message().to_string()))?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            config_err(
                if key == "." { String::new() } else { key },
                e.into_inner().message().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        self.train
            .validate()
            .map_err(|e| config_err("train", e.to_string()))?;
        self.attack
            .validate()
            .map_err(|e| config_err("attack", e.to_string()))?;
        if self.data.image_size < 16 || self.data.image_size % 8 != 0 {
            return Err(config_err(
                "data.image_size",
                "must be a multiple of 8 and at least 16",
            ));
        }
        if self.data.source != "synth" && !self.data.source.starts_with("cifar10:") {
            return Err(config_err(
                "data.source",
                format!(
                    "`{}` is neither `synth` nor `cifar10:<dir>`",
                    self.data.source
                ),
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(config_err("experiment.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn normalized(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 (hex) of [`Config::normalized`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.normalized().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Train and test splits for a run seed.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        match d.source.strip_prefix("cifar10:") {
            Some(dir) => load_cifar10(dir),
            None => {
                let s = d.seed.unwrap_or(seed);
                Ok((
                    synth_dataset(
                        d.num_classes,
                        d.train_per_class,
                        d.image_size,
                        s,
                        Split::Train,
                    )?,
                    synth_dataset(
                        d.num_classes,
                        d.test_per_class,
                        d.image_size,
                        s,
                        Split::Test,
                    )?,
                ))
            }
        }
    }

    /// Architecture of `kind` for inputs of `input` shape with `classes` classes.
    pub fn model_config(&self, kind: ModelKind, classes: usize, input: [usize; 3]) -> ModelConfig {
        let m = &self.model;
        match kind {
            ModelKind::Standard => ModelConfig::standard(m.width, classes, input),
            ModelKind::Mocse => match m.expert_width {
                Some(w) => ModelConfig::mocse(w, classes, input),
                None => {
                    let (w, mid, _) = matched_expert_width(m.width, classes, input);
                    ModelConfig::mocse(w, classes, input).with_mid_width(mid)
                }
            },
            ModelKind::Moe => ModelConfig::moe(m.experts, m.width, m.top_k, classes, input),
        }
    }

    /// Training settings for a run seed; adversarial runs use
    /// `train.adversarial`, falling back to `[attack]`.
    pub fn train_config(&self, seed: u64, adversarial: bool) -> TrainConfig {
        TrainConfig {
            seed,
            adversarial: if adversarial {
                Some(self.train.adversarial.unwrap_or(self.attack))
            } else {
                None
            },
            ..self.train
        }
    }
}
