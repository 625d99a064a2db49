//! Seeded random instances for property checks and the `verify` suite.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{PreferenceDataset, PreferenceSample};
use crate::error::Result;
use crate::features::{FeatureMap, PolicyParams};
use crate::linalg::norm;
use crate::losses::FeatureDesign;
use crate::policy::PolicyPair;
use crate::rng::{substream, StreamRng};

/// A random problem: features, a dataset over them, and a policy pair.
#[derive(Debug, Clone)]
pub struct Instance {
    pub fm: FeatureMap<f64>,
    pub ds: PreferenceDataset,
    pub pp: PolicyPair<f64>,
}

impl Instance {
    pub fn design(&self) -> FeatureDesign<f64> {
        FeatureDesign::new(&self.fm, &self.ds).expect("fixture samples are in range")
    }
}

/// Shape limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub max_dim: usize,
    pub max_samples: usize,
    pub max_states: usize,
    pub max_actions: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            max_dim: 16,
            max_samples: 64,
            max_states: 6,
            max_actions: 5,
        }
    }
}

/// Vector drawn uniformly from the ball of the given radius: a Gaussian
/// direction scaled by `radius * u^(1/dim)`.
pub fn ball_vector(rng: &mut StreamRng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 0.0 {
            let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
            return v.into_iter().map(|x| x * r / n).collect();
        }
    }
}

pub fn random_feature_map(rng: &mut StreamRng, states: usize, actions: usize, dim: usize) -> Result<FeatureMap<f64>> {
    let mut table = Vec::with_capacity(states * actions * dim);
    for _ in 0..states * actions {
        table.extend(ball_vector(rng, dim, 1.0));
    }
    FeatureMap::new(states, actions, dim, table)
}

pub fn random_dataset(rng: &mut StreamRng, states: usize, actions: usize, n: usize) -> Result<PreferenceDataset> {
    let samples = (0..n)
        .map(|_| {
            let s = rng.gen_range(0..states);
            let a1 = rng.gen_range(0..actions);
            let mut a2 = rng.gen_range(0..actions - 1);
            if a2 >= a1 {
                a2 += 1;
            }
            PreferenceSample::new(s, a1, a2, rng.gen_bool(0.5))
        })
        .collect::<Result<Vec<_>>>()?;
    PreferenceDataset::from_samples(samples)
}

/// Instance `index` of the family seeded by `seed`. Parameters lie inside the
/// bound `B ∈ [0.5, 3]` and `β ∈ [0.1, 2]`.
pub fn random_instance(seed: u64, index: usize, shape: InstanceShape) -> Result<Instance> {
    let mut rng = substream(seed, &format!("fixtures/instance/{index}"));
    let dim = rng.gen_range(1..=shape.max_dim);
    let states = rng.gen_range(1..=shape.max_states);
    let actions = rng.gen_range(2..=shape.max_actions.max(2));
    let n = rng.gen_range(1..=shape.max_samples);
    let fm = random_feature_map(&mut rng, states, actions, dim)?;
    let ds = random_dataset(&mut rng, states, actions, n)?;
    let bound = rng.gen_range(0.5..3.0);
    let beta = rng.gen_range(0.1..2.0);
    let theta = ball_vector(&mut rng, dim, bound);
    let theta_ref = ball_vector(&mut rng, dim, bound);
    let pp = PolicyPair::new(PolicyParams::new(theta, bound)?, PolicyParams::new(theta_ref, bound)?, beta)?;
    Ok(Instance { fm, ds, pp })
}

/// Probability vector with entries bounded away from zero.
pub fn random_distribution(rng: &mut StreamRng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Losses in `[0, scale)` that are not all equal.
pub fn random_losses(rng: &mut StreamRng, m: usize, scale: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..scale)).collect();
        if v.iter().any(|x| *x != v[0]) {
            return v;
        }
    }
}
