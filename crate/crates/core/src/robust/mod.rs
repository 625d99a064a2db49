//! Robust DPO objectives: tractable surrogates and exact dual oracles.

pub mod approx;
pub mod kl;
pub mod search;
pub mod wasserstein;

use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{domain, Result};
use crate::features::FeatureMap;
use crate::losses::{pointwise_losses_on, FeatureDesign};
use crate::policy::PolicyPair;
use crate::scalar::Scalar;

pub use approx::{
    input_gradient_rms_on, kldpo_loss_approx, kldpo_loss_approx_on, kldpo_weights_on, wdpo_loss_approx,
    wdpo_loss_approx_on, wdpo_pointwise_upper,
};
pub use kl::{
    kl_divergence, kl_dual_objective, kl_dual_solve, kl_dual_value, kl_tilt_at_temperature, kl_worst_case_exact,
    kldpo_worst_kernel, KlDualSolution, Saturation, TiltResult,
};
pub use search::{golden_section, ScalarMinimum};
pub use wasserstein::{
    design_support, wasserstein_dual_solve, wasserstein_dual_value, wasserstein_primal_oracle, SupportGrid,
    WassersteinDual, WassersteinInstance,
};

/// Which ambiguity set, and whether it is handled by a surrogate or exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustKind {
    WassersteinApprox,
    KlApprox,
    KlExact,
    WassersteinExact,
}

/// Radii, surrogate hyperparameters and solver settings for the robust losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustSpec {
    pub kind: RobustKind,
    pub rho_o: f64,
    pub tau: f64,
    pub rho: f64,
    pub p: u32,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol: f64,
    pub support: SupportGrid,
}

impl Default for RobustSpec {
    fn default() -> Self {
        Self {
            kind: RobustKind::WassersteinApprox,
            rho_o: 0.0,
            tau: 1.0,
            rho: 0.0,
            p: 2,
            lambda_lo: kl::LAMBDA_FLOOR,
            lambda_hi: kl::LAMBDA_CEILING,
            tol: 1e-8,
            support: SupportGrid::default(),
        }
    }
}

impl RobustSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.rho_o) || !finite_nonneg(self.rho) {
            return Err(domain("rho_o and rho must be finite and non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(domain(format!("tau must be positive, got {}", self.tau)));
        }
        if self.p != 2 {
            return Err(domain(format!("only Wasserstein order 2 is supported, got {}", self.p)));
        }
        if !(self.lambda_lo > 0.0 && self.lambda_lo < self.lambda_hi) {
            return Err(domain("need 0 < lambda_lo < lambda_hi"));
        }
        if !(self.tol > 0.0) {
            return Err(domain("tol must be positive"));
        }
        if self.support.steps > 0 && !(self.support.spacing > 0.0) {
            return Err(domain("support spacing must be positive"));
        }
        Ok(())
    }
}

pub fn robust_loss_on<S: Scalar>(spec: &RobustSpec, design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<S> {
    spec.validate()?;
    match spec.kind {
        RobustKind::WassersteinApprox => wdpo_loss_approx_on(design, pp, S::of(spec.rho_o)),
        RobustKind::KlApprox => kldpo_loss_approx_on(design, pp, S::of(spec.tau)),
        RobustKind::KlExact => {
            let losses = pointwise_losses_on(design, pp)?;
            kl_dual_value(
                &losses,
                design.weights(),
                S::of(spec.rho),
                S::of(spec.lambda_lo),
                S::of(spec.lambda_hi),
                S::of(spec.tol),
            )
        }
        RobustKind::WassersteinExact => {
            let inst = design_support(design, pp, spec.support)?;
            Ok(wasserstein_dual_solve(&inst, S::of(spec.rho), S::of(spec.tol))?.value)
        }
    }
}

/// Robust loss selected by `spec.kind`.
pub fn robust_loss<S: Scalar>(
    spec: &RobustSpec,
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<S> {
    robust_loss_on(spec, &FeatureDesign::new(fm, ds)?, pp)
}
