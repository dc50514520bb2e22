//! Declarative experiment configuration, read from TOML. Every field has a
//! default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfd_core::colormnist::{Corruption, TrainConfig, Variant, DEFAULT_MIRROR};
use sfd_core::evaluation::OodMode;
use sfd_core::numerics::BankMode;
use sfd_core::theory::{ModelConfig, EXAMPLES};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub offline: bool,
    pub theory: TheoryConfig,
    pub simulate: SimulateConfig,
    pub mnist: MnistConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("sfd-out"),
            offline: false,
            theory: TheoryConfig::default(),
            simulate: SimulateConfig::default(),
            mnist: MnistConfig::default(),
        }
    }
}

fn all_examples() -> Vec<String> {
    EXAMPLES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpQuery {
    pub x: f64,
    pub p: f64,
    #[serde(default = "three")]
    pub k: usize,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub examples: Vec<String>,
    pub p: f64,
    pub k: usize,
    /// Direct F_p evaluations; when non-empty the example table is skipped
    /// unless `examples` was also set explicitly on the command line.
    pub fp: Vec<FpQuery>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            examples: all_examples(),
            p: 0.9,
            k: 3,
            fp: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub examples: Vec<String>,
    /// Extra two-model configurations, named `custom-<i>`.
    pub custom: Vec<ModelConfig>,
    pub p: f64,
    pub sigma: f64,
    pub n_env: usize,
    pub mode: OodMode,
    /// Imbalanced weight-space ensembles to add, one per λ.
    pub lambdas: Vec<f64>,
    pub bank: BankMode,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            examples: all_examples(),
            custom: Vec::new(),
            p: 0.9,
            sigma: sfd_core::generative::DEFAULT_SIGMA,
            n_env: 1000,
            mode: OodMode::Sampled { n_per_env: 2000 },
            lambdas: Vec::new(),
            bank: BankMode::StandardBasis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub mirror: String,
    /// Overrides the cache root (otherwise `$SFD_CACHE_DIR` or `~/.cache/sfd`).
    pub cache_dir: Option<PathBuf>,
    pub variant: Variant,
    pub corruption: Corruption,
    pub p_grid: Vec<f64>,
    /// Each seed `s` trains the pair of models `2s` and `2s + 1`.
    pub seeds: Vec<u64>,
    /// Use only the first `n` training / test digits.
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub occlude_samples: usize,
    pub train: TrainConfig,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            mirror: DEFAULT_MIRROR.to_string(),
            cache_dir: None,
            variant: Variant::Multi,
            corruption: Corruption::Uniform,
            p_grid: vec![0.7, 0.75, 0.8, 0.85, 0.9],
            seeds: (0..5).collect(),
            n_train: None,
            n_test: None,
            occlude_samples: 1000,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Named two-model configurations requested for simulation.
    pub fn simulation_targets(&self) -> Result<Vec<(String, ModelConfig)>, CliError> {
        let s = &self.simulate;
        let mut out = Vec::new();
        for name in &s.examples {
            out.push((name.clone(), ModelConfig::example(name, s.p)?));
        }
        for (i, c) in s.custom.iter().enumerate() {
            out.push((format!("custom-{i}"), c.validated()?));
        }
        Ok(out)
    }
}
