//! Synthetic environments: random bounded feature tables, prompt and behavior
//! distributions, and pairs of competing rewards for shift studies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::features::{FeatureMap, PolicyParams};
use crate::linalg::{dot, norm};
use crate::numerics::sigmoid;
use crate::prefgen::{SamplingSpec, TabularReward};
use crate::rng::{substream, StreamRng};

/// Generator parameters for a random environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub seed: u64,
    /// Feature norms are drawn uniformly from `[min_feature_norm, 1]`.
    #[serde(default = "default_min_norm")]
    pub min_feature_norm: f64,
    /// Slope of the sigmoid rewards used by shift studies.
    #[serde(default = "default_reward_sharpness")]
    pub reward_sharpness: f64,
    /// Correlation-breaking noise added to the second reward direction.
    #[serde(default = "default_reward_noise")]
    pub reward_noise: f64,
}

fn default_min_norm() -> f64 {
    0.5
}

fn default_reward_sharpness() -> f64 {
    4.0
}

fn default_reward_noise() -> f64 {
    0.3
}

impl EnvSpec {
    pub fn new(num_states: usize, num_actions: usize, dim: usize, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            dim,
            seed,
            min_feature_norm: default_min_norm(),
            reward_sharpness: default_reward_sharpness(),
            reward_noise: default_reward_noise(),
        }
    }
}

/// Feature table plus the nominal prompt and behavior distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub fm: FeatureMap<f64>,
    pub prompt_dist: Vec<f64>,
    pub behavior: PolicyParams<f64>,
}

fn uniform_direction(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        // Rejection inside the unit ball gives an isotropic direction.
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl Environment {
    /// Random features with uniform prompts and a uniform behavior policy.
    pub fn generate(spec: &EnvSpec) -> Result<Self> {
        if spec.num_states == 0 || spec.num_actions < 2 || spec.dim == 0 {
            return Err(domain("environment needs states, at least two actions, and a positive dimension"));
        }
        if !(0.0..=1.0).contains(&spec.min_feature_norm) {
            return Err(domain("min_feature_norm must lie in [0, 1]"));
        }
        let mut rng = substream(spec.seed, "env/features");
        let mut table = Vec::with_capacity(spec.num_states * spec.num_actions * spec.dim);
        for _ in 0..spec.num_states * spec.num_actions {
            let dir = uniform_direction(&mut rng, spec.dim);
            let r = rng.gen_range(spec.min_feature_norm..=1.0);
            table.extend(dir.into_iter().map(|x| x * r));
        }
        let fm = FeatureMap::new(spec.num_states, spec.num_actions, spec.dim, table)?;
        Ok(Self {
            prompt_dist: vec![1.0 / spec.num_states as f64; spec.num_states],
            behavior: PolicyParams::zeros(spec.dim, 1.0)?,
            fm,
        })
    }

    pub fn sampling_spec(&self, n: usize, seed: u64, alpha_o: Option<f64>, reward_label: &str) -> SamplingSpec<f64> {
        SamplingSpec {
            prompt_dist: self.prompt_dist.clone(),
            behavior: self.behavior.clone(),
            n,
            seed,
            alpha_o,
            reward_label: reward_label.into(),
        }
    }

    /// Reward `σ(k · wᵀψ(s,a))`, strictly inside `(0,1)`.
    pub fn sigmoid_reward(&self, direction: &[f64], sharpness: f64) -> Result<TabularReward<f64>> {
        let mut table = Vec::with_capacity(self.fm.num_states() * self.fm.num_actions());
        for s in 0..self.fm.num_states() {
            for a in 0..self.fm.num_actions() {
                table.push(sigmoid(sharpness * dot(direction, self.fm.feature(s, a)?)));
            }
        }
        TabularReward::new(self.fm.num_states(), self.fm.num_actions(), table)
    }

    /// Two sigmoid rewards along nearly opposite feature directions: `r1` uses
    /// `w`, `r2` uses `-w` plus independent noise of norm `reward_noise`.
    pub fn competing_rewards(&self, spec: &EnvSpec) -> Result<(TabularReward<f64>, TabularReward<f64>)> {
        let mut rng = substream(spec.seed, "env/rewards");
        let w = uniform_direction(&mut rng, spec.dim);
        let noise = uniform_direction(&mut rng, spec.dim);
        let w2: Vec<f64> = w.iter().zip(&noise).map(|(a, e)| -a + spec.reward_noise * e).collect();
        Ok((
            self.sigmoid_reward(&w, spec.reward_sharpness)?,
            self.sigmoid_reward(&w2, spec.reward_sharpness)?,
        ))
    }

    /// Random parameter of the given norm, used as ground truth in rate studies.
    pub fn random_parameter(&self, seed: u64, radius: f64, bound: f64) -> Result<PolicyParams<f64>> {
        let mut rng = substream(seed, "env/theta_true");
        let dir = uniform_direction(&mut rng, self.fm.dim());
        PolicyParams::new(dir.into_iter().map(|x| x * radius).collect(), bound)
    }
}
