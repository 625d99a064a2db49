//! Preference-shift sweeps: train on data labelled by one reward mixture and
//! evaluate the learned policies under every mixture on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::experiments::env::Environment;
use crate::experiments::fmt_f64;
use crate::experiments::stats::{mean, median, std_dev};
use crate::features::PolicyParams;
use crate::policy::PolicyPair;
use crate::prefgen::{expected_policy_reward, mixture_reward, sample_dataset, MixtureMode, MixtureSpec, TabularReward};
use crate::rng::derive_seed;
use crate::train::{train, TrainConfig};

/// Environment, the two component rewards, and the training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEnv {
    pub environment: Environment,
    pub r1: TabularReward<f64>,
    pub r2: TabularReward<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftStudySpec {
    pub alpha_train: f64,
    pub alpha_grid: Vec<f64>,
    pub mode: MixtureMode,
    pub methods: Vec<TrainConfig>,
    pub seeds: Vec<u64>,
    pub env: ShiftEnv,
}

impl ShiftStudySpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| (0.0..=1.0).contains(&a);
        if self.alpha_grid.is_empty() || !self.alpha_grid.iter().all(|a| unit(*a)) {
            return Err(domain("alpha_grid must be non-empty with values in [0, 1]"));
        }
        if !unit(self.alpha_train) {
            return Err(domain("alpha_train must lie in [0, 1]"));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(domain("need at least one method and one seed"));
        }
        let mut labels: Vec<String> = self.methods.iter().map(TrainConfig::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            return Err(domain("method configurations must have distinct labels"));
        }
        if self.env.n == 0 {
            return Err(domain("training set size must be positive"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }
}

/// One (method, seed, alpha) evaluation. `reward` is `None` when training failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCell {
    pub method: String,
    pub seed: u64,
    pub alpha: f64,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub method: String,
    pub alpha: f64,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub mode: MixtureMode,
    pub alpha_train: f64,
    pub cells: Vec<ShiftCell>,
    pub summary: Vec<ShiftSummary>,
    pub failures: Vec<ShiftFailure>,
}

impl ShiftReport {
    /// `method,seed,alpha,reward`; failed cells have an empty reward.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,seed,alpha,reward\n");
        for c in &self.cells {
            let r = c.reward.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", c.method, c.seed, fmt_f64(c.alpha), r));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            mode: MixtureMode,
            alpha_train: f64,
            summary: &'a [ShiftSummary],
            failures: &'a [ShiftFailure],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            mode: self.mode,
            alpha_train: self.alpha_train,
            summary: &self.summary,
            failures: &self.failures,
        })?)
    }

    pub fn median_at(&self, method: &str, alpha: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.alpha == alpha)
            .and_then(|s| s.median)
    }
}

fn evaluate_seed(
    spec: &ShiftStudySpec,
    cfg: &TrainConfig,
    seed: u64,
    train_reward: &TabularReward<f64>,
    eval_rewards: &[TabularReward<f64>],
) -> Result<Vec<f64>> {
    let env = &spec.env.environment;
    let data_seed = derive_seed(seed, "shift/data");
    let label = format!("{:?}({})", spec.mode, spec.alpha_train).to_lowercase();
    let sampling = env.sampling_spec(spec.env.n, data_seed, Some(spec.alpha_train), &label);
    let ds = sample_dataset(&env.fm, &sampling, train_reward)?;
    let init = PolicyPair::with_uniform_reference(PolicyParams::zeros(env.fm.dim(), cfg.bound)?, cfg.beta)?;
    let mut cfg = cfg.clone();
    cfg.seed = derive_seed(seed, "shift/train");
    let report = train(&cfg, &init, &env.fm, &ds)?;
    eval_rewards
        .iter()
        .map(|r| expected_policy_reward(&report.final_params, &env.fm, &env.prompt_dist, r))
        .collect()
}

/// Runs every method on every seed and evaluates across the alpha grid.
/// Training failures are recorded per cell and do not abort the sweep.
pub fn shift_sweep(spec: &ShiftStudySpec) -> Result<ShiftReport> {
    spec.validate()?;
    let mix = |alpha: f64| mixture_reward(&spec.env.r1, &spec.env.r2, MixtureSpec::new(spec.mode, alpha)?);
    let train_reward = mix(spec.alpha_train)?;
    let eval_rewards: Vec<TabularReward<f64>> = spec.alpha_grid.iter().map(|a| mix(*a)).collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for cfg in &spec.methods {
        let method = cfg.label();
        for &seed in &spec.seeds {
            let rewards = match evaluate_seed(spec, cfg, seed, &train_reward, &eval_rewards) {
                Ok(r) => r.into_iter().map(Some).collect(),
                Err(e) => {
                    log::warn!("shift cell {method} seed {seed} failed: {e}");
                    failures.push(ShiftFailure {
                        method: method.clone(),
                        seed,
                        error: e.to_string(),
                    });
                    vec![None; spec.alpha_grid.len()]
                }
            };
            for (alpha, reward) in spec.alpha_grid.iter().zip(rewards) {
                cells.push(ShiftCell {
                    method: method.clone(),
                    seed,
                    alpha: *alpha,
                    reward,
                });
            }
        }
    }

    let mut summary = Vec::new();
    for cfg in &spec.methods {
        let method = cfg.label();
        for &alpha in &spec.alpha_grid {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method && c.alpha == alpha)
                .filter_map(|c| c.reward)
                .collect();
            summary.push(ShiftSummary {
                method: method.clone(),
                alpha,
                median: median(&values),
                mean: mean(&values),
                std_dev: std_dev(&values),
                completed: values.len(),
            });
        }
    }
    Ok(ShiftReport {
        mode: spec.mode,
        alpha_train: spec.alpha_train,
        cells,
        summary,
        failures,
    })
}
