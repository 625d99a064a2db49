//! JSON configuration documents, one schema per command.

use std::path::{Path, PathBuf};

use drdpo::experiments::EnvSpec;
use drdpo::prefgen::MixtureMode;
use drdpo::train::TrainConfig;
use drdpo::PolicyParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Stage};

pub const SCHEMA_VERSION: u32 = 1;

/// Reads and parses a config, checking `schema_version` first.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).stage("reading config")?;
    let parse_err = |e: serde_json::Error| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        other => {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: 1,
                column: 1,
                message: format!("expected \"schema_version\": {SCHEMA_VERSION}, found {other:?}"),
            })
        }
    }
    serde_json::from_str(&text).map_err(parse_err)
}

/// Label source for generated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    /// Reward induced by a random ground-truth parameter of norm `theta_radius`.
    Realizable { theta_radius: f64, beta: f64 },
    /// Mixture of the environment's two competing sigmoid rewards.
    Mixture { mode: MixtureMode, alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub reward: RewardConfig,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub schema_version: u32,
    /// Paths are relative to the config file.
    pub features: PathBuf,
    pub dataset: PathBuf,
    pub train: TrainConfig,
    /// Initial parameters; zero vector when absent.
    #[serde(default)]
    pub init: Option<PolicyParams>,
    /// Reference parameters; zero vector (uniform policy) when absent.
    #[serde(default)]
    pub reference: Option<PolicyParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftCommandConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub n: usize,
    pub alpha_train: f64,
    pub alpha_grid: Vec<f64>,
    pub modes: Vec<MixtureMode>,
    pub methods: Vec<TrainConfig>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCommandConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub theta_radius: f64,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    /// Defaults to 16 times the largest grid size.
    #[serde(default)]
    pub reference_n: Option<usize>,
    pub methods: Vec<TrainConfig>,
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_lr_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistCommandConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub n: usize,
    pub seed: u64,
    /// Norm of the random policy parameter at which losses are evaluated.
    pub theta_radius: f64,
    pub beta: f64,
    pub tau: f64,
    pub workers: usize,
    pub microbatch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Random instances per randomized check.
    #[serde(default = "default_instances")]
    pub instances: usize,
}

fn default_instances() -> usize {
    100
}
