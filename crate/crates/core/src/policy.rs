//! Log-linear softmax policies `pi_theta(a|s) ∝ exp(theta^T psi(s,a))`.

use serde::{Deserialize, Serialize};

use crate::dataset::{feature_difference, PreferenceSample};
use crate::error::{domain, Result};
use crate::features::{FeatureMap, PolicyParams};
use crate::linalg::{dot, norm, sub};
use crate::numerics::log_sum_exp;
use crate::scalar::Scalar;

/// Trainable policy, its reference, and the DPO temperature `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct PolicyPair<S: Scalar> {
    pub current: PolicyParams<S>,
    pub reference: PolicyParams<S>,
    pub beta: S,
}

impl<S: Scalar> PolicyPair<S> {
    pub fn new(current: PolicyParams<S>, reference: PolicyParams<S>, beta: S) -> Result<Self> {
        if !(beta > S::zero()) || !beta.is_finite() {
            return Err(domain(format!("beta must be positive, got {beta}")));
        }
        if current.dim() != reference.dim() {
            return Err(domain(format!(
                "current has dimension {} but reference has {}",
                current.dim(),
                reference.dim()
            )));
        }
        Ok(Self {
            current,
            reference,
            beta,
        })
    }

    /// Pair with the uniform reference policy (`theta_ref = 0`).
    pub fn with_uniform_reference(current: PolicyParams<S>, beta: S) -> Result<Self> {
        let reference = PolicyParams::zeros(current.dim(), current.bound)?;
        Self::new(current, reference, beta)
    }

    pub fn dim(&self) -> usize {
        self.current.dim()
    }

    /// `theta - theta_ref`
    pub fn delta(&self) -> Vec<S> {
        sub(&self.current.theta, &self.reference.theta)
    }

    /// Same pair with the current parameter replaced.
    pub fn with_theta(&self, theta: Vec<S>) -> Self {
        Self {
            current: PolicyParams {
                theta,
                bound: self.current.bound,
            },
            reference: self.reference.clone(),
            beta: self.beta,
        }
    }

    pub fn check_dims(&self, fm: &FeatureMap<S>) -> Result<()> {
        if self.dim() != fm.dim() {
            return Err(domain(format!(
                "parameter dimension {} does not match feature dimension {}",
                self.dim(),
                fm.dim()
            )));
        }
        Ok(())
    }
}

fn check_param_dim<S: Scalar>(p: &PolicyParams<S>, fm: &FeatureMap<S>) -> Result<()> {
    if p.dim() != fm.dim() {
        return Err(domain(format!(
            "parameter dimension {} does not match feature dimension {}",
            p.dim(),
            fm.dim()
        )));
    }
    Ok(())
}

/// `log pi_theta(.|s)`, computed with max subtraction.
pub fn log_action_probabilities<S: Scalar>(
    p: &PolicyParams<S>,
    fm: &FeatureMap<S>,
    state: usize,
) -> Result<Vec<S>> {
    check_param_dim(p, fm)?;
    fm.check_state(state)?;
    let logits: Vec<S> = (0..fm.num_actions())
        .map(|a| dot(&p.theta, fm.feature_unchecked(state, a)))
        .collect();
    let lse = log_sum_exp(&logits);
    Ok(logits.into_iter().map(|l| l - lse).collect())
}

/// `pi_theta(.|s)`; strictly positive entries summing to one.
pub fn action_probabilities<S: Scalar>(
    p: &PolicyParams<S>,
    fm: &FeatureMap<S>,
    state: usize,
) -> Result<Vec<S>> {
    check_param_dim(p, fm)?;
    fm.check_state(state)?;
    let logits: Vec<S> = (0..fm.num_actions())
        .map(|a| dot(&p.theta, fm.feature_unchecked(state, a)))
        .collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|l| (*l - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Preference score `h_theta(s, a1, a2) = (theta - theta_ref)^T (psi(s,a1) - psi(s,a2))`.
///
/// Debug builds cross-check the closed form against the log-ratio definition.
pub fn preference_score<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
) -> Result<S> {
    pp.check_dims(fm)?;
    let x = feature_difference(sample, fm)?;
    let h = dot(&pp.delta(), &x);
    #[cfg(debug_assertions)]
    {
        let oracle = preference_score_log_ratio(pp, fm, sample)?;
        let tol = S::of(1e-10).max(S::of(1e4) * S::epsilon()) * (S::one() + pp.current.bound);
        debug_assert!(
            (h - oracle).abs() <= tol,
            "closed-form score {h} disagrees with log-ratio {oracle}"
        );
    }
    Ok(h)
}

/// `log(pi_theta(a1|s)/pi_ref(a1|s)) - log(pi_theta(a2|s)/pi_ref(a2|s))`, straight from the definition.
pub fn preference_score_log_ratio<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
) -> Result<S> {
    let cur = log_action_probabilities(&pp.current, fm, sample.state)?;
    let rf = log_action_probabilities(&pp.reference, fm, sample.state)?;
    fm.check_action(sample.first)?;
    fm.check_action(sample.second)?;
    let (a1, a2) = (sample.first, sample.second);
    Ok((cur[a1] - rf[a1]) - (cur[a2] - rf[a2]))
}

/// Euclidean projection onto `{||theta|| <= B}`. Interior points are returned untouched.
pub fn project_params<S: Scalar>(p: &PolicyParams<S>) -> PolicyParams<S> {
    let n = norm(&p.theta);
    if n <= p.bound {
        return p.clone();
    }
    let factor = p.bound / n;
    PolicyParams {
        bound: p.bound,
        theta: p.theta.iter().map(|v| *v * factor).collect(),
    }
}
