//! Reward tables, Bradley-Terry labelling, reward mixtures and dataset sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, PreferenceDataset, PreferenceSample};
use crate::error::{check_index, domain, Error, Result};
use crate::features::{FeatureMap, PolicyParams};
use crate::numerics::sigmoid;
use crate::policy::{action_probabilities, log_action_probabilities};
use crate::rng::{categorical, substream};
use crate::scalar::Scalar;

/// Dense reward table `r(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardRepr<S>", into = "RewardRepr<S>")]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct TabularReward<S: Scalar> {
    num_states: usize,
    num_actions: usize,
    table: Vec<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
struct RewardRepr<S: Scalar> {
    num_states: usize,
    num_actions: usize,
    table: Vec<S>,
}

impl<S: Scalar> TryFrom<RewardRepr<S>> for TabularReward<S> {
    type Error = Error;
    fn try_from(r: RewardRepr<S>) -> Result<Self> {
        TabularReward::new(r.num_states, r.num_actions, r.table)
    }
}

impl<S: Scalar> From<TabularReward<S>> for RewardRepr<S> {
    fn from(r: TabularReward<S>) -> Self {
        Self {
            num_states: r.num_states,
            num_actions: r.num_actions,
            table: r.table,
        }
    }
}

impl<S: Scalar> TabularReward<S> {
    pub fn new(num_states: usize, num_actions: usize, table: Vec<S>) -> Result<Self> {
        if table.len() != num_states * num_actions {
            return Err(domain(format!(
                "reward table has {} entries, expected {}",
                table.len(),
                num_states * num_actions
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(domain("reward table contains non-finite entries"));
        }
        Ok(Self {
            num_states,
            num_actions,
            table,
        })
    }

    pub fn constant(num_states: usize, num_actions: usize, value: S) -> Result<Self> {
        Self::new(num_states, num_actions, vec![value; num_states * num_actions])
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn table(&self) -> &[S] {
        &self.table
    }

    pub fn get(&self, state: usize, action: usize) -> Result<S> {
        check_index("state", state, self.num_states)?;
        check_index("action", action, self.num_actions)?;
        Ok(self.table[state * self.num_actions + action])
    }

    pub fn row(&self, state: usize) -> Result<&[S]> {
        check_index("state", state, self.num_states)?;
        Ok(&self.table[state * self.num_actions..(state + 1) * self.num_actions])
    }

    /// Same table with `offsets[s]` added to every action of state `s`.
    pub fn shifted_per_state(&self, offsets: &[S]) -> Result<Self> {
        if offsets.len() != self.num_states {
            return Err(domain("one offset per state required"));
        }
        let table = self
            .table
            .iter()
            .enumerate()
            .map(|(i, v)| *v + offsets[i / self.num_actions])
            .collect();
        Self::new(self.num_states, self.num_actions, table)
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }
}

/// `P(a1 ≻ a2 | s) = σ(r(s,a1) - r(s,a2))`
pub fn bt_preference_prob<S: Scalar>(r: &TabularReward<S>, state: usize, a1: usize, a2: usize) -> Result<S> {
    Ok(sigmoid(r.get(state, a1)? - r.get(state, a2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureMode {
    /// `alpha * r1 + (1 - alpha) * r2`
    Convex,
    /// `r1^alpha * r2^(1 - alpha)`, positive rewards only.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub mode: MixtureMode,
    pub alpha: f64,
}

impl MixtureSpec {
    pub fn new(mode: MixtureMode, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(domain(format!("mixture coefficient must lie in [0,1], got {alpha}")));
        }
        Ok(Self { mode, alpha })
    }
}

/// Entrywise mixture of two rewards on the same grid.
pub fn mixture_reward<S: Scalar>(
    r1: &TabularReward<S>,
    r2: &TabularReward<S>,
    spec: MixtureSpec,
) -> Result<TabularReward<S>> {
    if !r1.same_grid(r2) {
        return Err(domain("mixture components live on different grids"));
    }
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(domain(format!("mixture coefficient must lie in [0,1], got {}", spec.alpha)));
    }
    let alpha = S::of(spec.alpha);
    let table: Vec<S> = match spec.mode {
        MixtureMode::Convex => {
            if spec.alpha == 1.0 {
                r1.table.clone()
            } else if spec.alpha == 0.0 {
                r2.table.clone()
            } else {
                r1.table
                    .iter()
                    .zip(&r2.table)
                    .map(|(a, b)| alpha * *a + (S::one() - alpha) * *b)
                    .collect()
            }
        }
        MixtureMode::Geometric => {
            if let Some(v) = r1.table.iter().chain(&r2.table).find(|v| **v <= S::zero()) {
                return Err(domain(format!(
                    "geometric mixing needs strictly positive rewards, found {v}"
                )));
            }
            if spec.alpha == 1.0 {
                r1.table.clone()
            } else if spec.alpha == 0.0 {
                r2.table.clone()
            } else {
                r1.table
                    .iter()
                    .zip(&r2.table)
                    .map(|(a, b)| a.powf(alpha) * b.powf(S::one() - alpha))
                    .collect()
            }
        }
    };
    TabularReward::new(r1.num_states, r1.num_actions, table)
}

/// Nominal sampling distribution: prompts from `prompt_dist`, completions from `behavior`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SamplingSpec<S: Scalar> {
    pub prompt_dist: Vec<S>,
    pub behavior: PolicyParams<S>,
    pub n: usize,
    pub seed: u64,
    /// Recorded in the dataset header.
    #[serde(default)]
    pub alpha_o: Option<f64>,
    #[serde(default)]
    pub reward_label: String,
}

impl<S: Scalar> SamplingSpec<S> {
    pub fn validate(&self, num_states: usize) -> Result<()> {
        if self.prompt_dist.len() != num_states {
            return Err(domain(format!(
                "prompt distribution has {} entries for {} states",
                self.prompt_dist.len(),
                num_states
            )));
        }
        if self.prompt_dist.iter().any(|p| !(*p >= S::zero())) {
            return Err(domain("prompt distribution has negative entries"));
        }
        let total: S = self.prompt_dist.iter().copied().sum();
        if (total - S::one()).abs() > S::of(1e-12).max(S::of(16.0) * S::epsilon()) {
            return Err(domain(format!("prompt distribution sums to {total}")));
        }
        if self.n == 0 {
            return Err(domain("sample count must be at least 1"));
        }
        Ok(())
    }
}

const MAX_REDRAWS: usize = 100_000;

/// Draws `n` comparisons `s ~ mu, a1, a2 ~ pi(.|s)` i.i.d., `y ~ Bernoulli(P(a1 ≻ a2|s))`.
///
/// Draws with `a1 == a2` are discarded and redrawn. Output is a pure function of the spec.
pub fn sample_dataset<S: Scalar>(
    fm: &FeatureMap<S>,
    spec: &SamplingSpec<S>,
    r: &TabularReward<S>,
) -> Result<PreferenceDataset> {
    spec.validate(fm.num_states())?;
    if r.num_states() != fm.num_states() || r.num_actions() != fm.num_actions() {
        return Err(domain("reward grid does not match the feature map"));
    }
    if fm.num_actions() < 2 {
        return Err(domain("need at least two actions to form a comparison"));
    }
    let mu: Vec<f64> = spec.prompt_dist.iter().map(|p| p.as_f64()).collect();
    let behavior: Vec<Vec<f64>> = (0..fm.num_states())
        .map(|s| {
            action_probabilities(&spec.behavior, fm, s)
                .map(|row| row.into_iter().map(|p| p.as_f64()).collect())
        })
        .collect::<Result<_>>()?;

    let mut rng = substream(spec.seed, "prefgen/sample_dataset");
    let mut samples = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let s = categorical(&mu, rng.gen::<f64>());
        let probs = &behavior[s];
        let a1 = categorical(probs, rng.gen::<f64>());
        let mut a2 = categorical(probs, rng.gen::<f64>());
        let mut redraws = 0;
        while a2 == a1 {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(domain(format!(
                    "behavior policy in state {s} never produced two distinct actions"
                )));
            }
            a2 = categorical(probs, rng.gen::<f64>());
        }
        let p = bt_preference_prob(r, s, a1, a2)?.as_f64();
        let label = rng.gen::<f64>() < p;
        samples.push(PreferenceSample::new(s, a1, a2, label)?);
    }
    let meta = DatasetMeta {
        sample_count: samples.len(),
        seed: spec.seed,
        alpha_o: spec.alpha_o,
        reward: spec.reward_label.clone(),
    };
    PreferenceDataset::new(samples, meta)
}

/// Reward `r(s,a) = beta * log(pi_true(a|s) / pi_ref(a|s))`, whose Bradley-Terry
/// probabilities equal `σ(beta * h_true)`. The per-state normalizer is taken as zero.
pub fn realizable_reward<S: Scalar>(
    theta_true: &PolicyParams<S>,
    pp_ref: &PolicyParams<S>,
    beta: S,
    fm: &FeatureMap<S>,
) -> Result<TabularReward<S>> {
    if !(beta > S::zero()) {
        return Err(domain(format!("beta must be positive, got {beta}")));
    }
    let mut table = Vec::with_capacity(fm.num_states() * fm.num_actions());
    for s in 0..fm.num_states() {
        let cur = log_action_probabilities(theta_true, fm, s)?;
        let rf = log_action_probabilities(pp_ref, fm, s)?;
        table.extend(cur.iter().zip(&rf).map(|(c, r)| beta * (*c - *r)));
    }
    TabularReward::new(fm.num_states(), fm.num_actions(), table)
}

/// `sum_s mu(s) sum_a pi_theta(a|s) r(s,a)`
pub fn expected_policy_reward<S: Scalar>(
    p: &PolicyParams<S>,
    fm: &FeatureMap<S>,
    mu: &[S],
    r: &TabularReward<S>,
) -> Result<S> {
    if mu.len() != fm.num_states() {
        return Err(domain("state distribution length does not match the feature map"));
    }
    if r.num_states() != fm.num_states() || r.num_actions() != fm.num_actions() {
        return Err(domain("reward grid does not match the feature map"));
    }
    let mut total = S::zero();
    for (s, weight) in mu.iter().enumerate() {
        let probs = action_probabilities(p, fm, s)?;
        let inner = probs
            .iter()
            .zip(r.row(s)?)
            .fold(S::zero(), |acc, (pa, ra)| acc + *pa * *ra);
        total = total + *weight * inner;
    }
    Ok(total)
}
