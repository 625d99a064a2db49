//! Tractable robust surrogates: the gradient-regularized WDPO loss and the
//! exponentially reweighted KLDPO loss.

use crate::dataset::{PreferenceDataset, PreferenceSample};
use crate::error::{domain, Result};
use crate::features::FeatureMap;
use crate::linalg::norm;
use crate::losses::{
    empirical_dpo_loss_on, input_gradient_norm, input_gradient_norm_from_score, loss_from_scaled_score,
    pointwise_dpo_loss, pointwise_losses_on, FeatureDesign,
};
use crate::policy::PolicyPair;
use crate::robust::kl::kldpo_worst_kernel;
use crate::scalar::Scalar;

fn check_rho_o<S: Scalar>(rho_o: S) -> Result<()> {
    if rho_o >= S::zero() && rho_o.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("rho_o must be non-negative, got {rho_o}")))
    }
}

/// Root-mean-square of the per-sample input-gradient norms.
pub fn input_gradient_rms_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<S> {
    design.check(pp)?;
    let delta_norm = norm(&pp.delta());
    let mut acc = S::zero();
    for (i, t) in design.scaled_scores(pp).into_iter().enumerate() {
        let g = input_gradient_norm_from_score(t, design.y(i), pp.beta, delta_norm);
        acc = acc + design.weight(i) * g * g;
    }
    Ok(acc.sqrt())
}

pub fn wdpo_loss_approx_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>, rho_o: S) -> Result<S> {
    check_rho_o(rho_o)?;
    let base = empirical_dpo_loss_on(design, pp)?;
    if rho_o == S::zero() {
        return Ok(base);
    }
    Ok(base + rho_o * input_gradient_rms_on(design, pp)?)
}

/// Empirical DPO loss plus `rho_o` times the RMS input-gradient norm.
pub fn wdpo_loss_approx<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
    rho_o: S,
) -> Result<S> {
    wdpo_loss_approx_on(&FeatureDesign::new(fm, ds)?, pp, rho_o)
}

/// `l(z) + rho_o * ||grad_x l(z)||²`, the per-sample relaxation used for micro-batches.
pub fn wdpo_pointwise_upper<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
    rho_o: S,
) -> Result<S> {
    check_rho_o(rho_o)?;
    let loss = pointwise_dpo_loss(pp, fm, sample)?;
    if rho_o == S::zero() {
        return Ok(loss);
    }
    let g = input_gradient_norm(pp, fm, sample)?;
    Ok(loss + rho_o * g * g)
}

/// Kernel weights over the design's empirical distribution.
pub fn kldpo_weights_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>, tau: S) -> Result<Vec<S>> {
    let losses = pointwise_losses_on(design, pp)?;
    kldpo_worst_kernel(&losses, design.weights(), tau)
}

pub fn kldpo_loss_approx_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>, tau: S) -> Result<S> {
    design.check(pp)?;
    let scores = design.scaled_scores(pp);
    let losses: Vec<S> = scores
        .iter()
        .enumerate()
        .map(|(i, t)| loss_from_scaled_score(*t, design.y(i)))
        .collect();
    let weights = kldpo_worst_kernel(&losses, design.weights(), tau)?;
    Ok(weights
        .iter()
        .zip(&losses)
        .fold(S::zero(), |acc, (w, l)| acc + *w * *l))
}

/// `Σ w_i l_i` with `w` the worst-case kernel at temperature `tau` over uniform weights.
pub fn kldpo_loss_approx<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
    tau: S,
) -> Result<S> {
    kldpo_loss_approx_on(&FeatureDesign::new(fm, ds)?, pp, tau)
}
