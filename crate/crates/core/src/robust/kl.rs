//! KL ambiguity sets over a finite support: the exponential-tilt kernel, the
//! one-dimensional dual, and the exact worst-case distribution at a given radius.
//!
//! For losses `l` and base `q`, the tilt at temperature `λ` is
//! `p_i = q_i exp((l_i - μ - λ)/λ)` with `μ` fixed by normalization. Its KL
//! divergence from `q` falls strictly from `-log q(argmax l)` to 0 as `λ` grows,
//! so the radius-`ρ` worst case is found by bisection on `λ`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::weighted_log_sum_exp;
use crate::robust::search::golden_section;
use crate::scalar::Scalar;

/// Default bracket for the tilt temperature.
pub const LAMBDA_FLOOR: f64 = 1e-6;
pub const LAMBDA_CEILING: f64 = 1e6;
const BISECTION_STEPS: usize = 400;

pub(crate) fn validate_distribution<S: Scalar>(values: &[S], base: &[S]) -> Result<()> {
    if values.is_empty() {
        return Err(domain("empty loss vector"));
    }
    if values.len() != base.len() {
        return Err(domain(format!(
            "{} losses but base distribution has {} entries",
            values.len(),
            base.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "loss vector".into(),
        });
    }
    if base.iter().any(|q| !(*q >= S::zero())) {
        return Err(domain("base distribution has negative entries"));
    }
    let total: S = base.iter().copied().sum();
    let tol = S::of(1e-12).max(S::of(64.0) * S::epsilon()) * S::from_usize(base.len().max(1)).unwrap();
    if (total - S::one()).abs() > tol {
        return Err(domain(format!("base distribution sums to {total}")));
    }
    Ok(())
}

fn support_extremes<S: Scalar>(losses: &[S], base: &[S]) -> (S, S) {
    losses
        .iter()
        .zip(base)
        .filter(|(_, q)| **q > S::zero())
        .fold((S::infinity(), S::neg_infinity()), |(lo, hi), (l, _)| (lo.min(*l), hi.max(*l)))
}

fn all_equal_on_support<S: Scalar>(losses: &[S], base: &[S]) -> bool {
    let (lo, hi) = support_extremes(losses, base);
    lo == hi
}

fn base_mean<S: Scalar>(losses: &[S], base: &[S]) -> S {
    losses
        .iter()
        .zip(base)
        .fold(S::zero(), |acc, (l, q)| acc + *l * *q)
}

/// `KL(p || q)`, with `0 log 0 = 0`.
pub fn kl_divergence<S: Scalar>(p: &[S], q: &[S]) -> S {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > S::zero())
        .fold(S::zero(), |acc, (pi, qi)| acc + *pi * (*pi / *qi).ln())
}

/// Approximate worst-case kernel `w_i ∝ q_i exp((l_i - Σ_j q_j l_j) / τ)`.
pub fn kldpo_worst_kernel<S: Scalar>(losses: &[S], base: &[S], tau: S) -> Result<Vec<S>> {
    validate_distribution(losses, base)?;
    if !(tau > S::zero()) {
        return Err(domain(format!("temperature must be positive, got {tau}")));
    }
    if all_equal_on_support(losses, base) {
        return Ok(base.to_vec());
    }
    let mean = base_mean(losses, base);
    let logits: Vec<S> = losses
        .iter()
        .zip(base)
        .map(|(l, q)| {
            if *q > S::zero() {
                q.ln() + (*l - mean) / tau
            } else {
                S::neg_infinity()
            }
        })
        .collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|v| (*v - max).exp()).collect();
    let total = exps.iter().fold(S::zero(), |acc, e| acc + *e);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `inf_{λ ∈ [lo, hi]} λρ + λ log Σ q_i e^{l_i/λ}` by golden-section search.
pub fn kl_dual_value<S: Scalar>(
    losses: &[S],
    base: &[S],
    rho: S,
    lambda_lo: S,
    lambda_hi: S,
    tol: S,
) -> Result<S> {
    Ok(kl_dual_solve(losses, base, rho, lambda_lo, lambda_hi, tol)?.value)
}

/// Dual optimum with its minimizing temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct KlDualSolution<S: Scalar> {
    pub value: S,
    pub lambda: S,
    pub iterations: usize,
}

pub fn kl_dual_objective<S: Scalar>(losses: &[S], base: &[S], rho: S, lambda: S) -> S {
    let (_, lmax) = support_extremes(losses, base);
    let shifted: Vec<S> = losses.iter().map(|l| (*l - lmax) / lambda).collect();
    lmax + lambda * weighted_log_sum_exp(&shifted, base) + lambda * rho
}

pub fn kl_dual_solve<S: Scalar>(
    losses: &[S],
    base: &[S],
    rho: S,
    lambda_lo: S,
    lambda_hi: S,
    tol: S,
) -> Result<KlDualSolution<S>> {
    validate_distribution(losses, base)?;
    if !(rho >= S::zero()) {
        return Err(domain(format!("radius must be non-negative, got {rho}")));
    }
    if !(lambda_lo > S::zero() && lambda_lo < lambda_hi) {
        return Err(domain(format!(
            "need 0 < lambda_lo < lambda_hi, got [{lambda_lo}, {lambda_hi}]"
        )));
    }
    if !(tol > S::zero()) {
        return Err(domain("tolerance must be positive"));
    }
    if all_equal_on_support(losses, base) {
        let (_, c) = support_extremes(losses, base);
        return Ok(KlDualSolution {
            value: c + lambda_lo * rho,
            lambda: lambda_lo,
            iterations: 0,
        });
    }
    let m = golden_section(
        |lambda| kl_dual_objective(losses, base, rho, lambda),
        lambda_lo,
        lambda_hi,
        tol,
    );
    Ok(KlDualSolution {
        value: m.value,
        lambda: m.argmin,
        iterations: m.iterations,
    })
}

/// Why a tilt solve stopped short of an interior solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    /// Interior solution with `KL = ρ`.
    None,
    /// `ρ` is at least the KL of the point mass on the largest loss (`λ → 0⁺`).
    PointMass,
    /// The required temperature lies below the bracket floor.
    LambdaFloor,
    /// The required temperature lies above the bracket ceiling.
    LambdaCeiling,
}

/// Worst-case distribution in a KL ball and its dual variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct TiltResult<S: Scalar> {
    pub weights: Vec<S>,
    /// Temperature; zero for the point-mass limit.
    pub lambda: S,
    pub mu: S,
    pub achieved_kl: S,
    pub iterations: usize,
    pub saturation: Saturation,
}

impl<S: Scalar> TiltResult<S> {
    /// `Σ p_i l_i`
    pub fn primal_value(&self, losses: &[S]) -> S {
        base_mean(losses, &self.weights)
    }

    /// `-μ - λ`, bounded above by `-Σ q_i l_i`.
    pub fn dual_offset(&self) -> S {
        -self.mu - self.lambda
    }
}

/// Tilt `p ∝ q e^{l/λ}` at a fixed temperature, with `μ` and the achieved KL.
pub fn kl_tilt_at_temperature<S: Scalar>(losses: &[S], base: &[S], lambda: S) -> Result<TiltResult<S>> {
    validate_distribution(losses, base)?;
    if !(lambda > S::zero()) {
        return Err(domain(format!("temperature must be positive, got {lambda}")));
    }
    Ok(tilt(losses, base, lambda))
}

fn tilt<S: Scalar>(losses: &[S], base: &[S], lambda: S) -> TiltResult<S> {
    let (_, lmax) = support_extremes(losses, base);
    let shifted: Vec<S> = losses.iter().map(|l| (*l - lmax) / lambda).collect();
    let log_z = weighted_log_sum_exp(&shifted, base);
    let weights: Vec<S> = shifted
        .iter()
        .zip(base)
        .map(|(a, q)| if *q > S::zero() { *q * (*a - log_z).exp() } else { S::zero() })
        .collect();
    // KL = Σ p_i (a_i - log Z), exact for the tilted family.
    let achieved_kl = weights
        .iter()
        .zip(&shifted)
        .filter(|(p, _)| **p > S::zero())
        .fold(S::zero(), |acc, (p, a)| acc + *p * (*a - log_z))
        .max(S::zero());
    TiltResult {
        weights,
        lambda,
        mu: lmax + lambda * log_z - lambda,
        achieved_kl,
        iterations: 0,
        saturation: Saturation::None,
    }
}

fn point_mass<S: Scalar>(losses: &[S], base: &[S]) -> TiltResult<S> {
    let (_, lmax) = support_extremes(losses, base);
    let top: S = losses
        .iter()
        .zip(base)
        .filter(|(l, q)| **q > S::zero() && **l == lmax)
        .fold(S::zero(), |acc, (_, q)| acc + *q);
    let weights: Vec<S> = losses
        .iter()
        .zip(base)
        .map(|(l, q)| if *q > S::zero() && *l == lmax { *q / top } else { S::zero() })
        .collect();
    TiltResult {
        achieved_kl: kl_divergence(&weights, base),
        weights,
        lambda: S::zero(),
        mu: lmax,
        iterations: 0,
        saturation: Saturation::PointMass,
    }
}

/// Exact maximizer of `Σ p_i l_i` over `{p : KL(p || q) <= ρ}` for `ρ > 0`.
///
/// Bisects `log λ` over `[1e-6, 1e6]` until `|KL - ρ| <= tol` or the bracket
/// collapses to machine precision. Radii beyond the point-mass KL return that
/// limit flagged as [`Saturation::PointMass`].
pub fn kl_worst_case_exact<S: Scalar>(losses: &[S], base: &[S], rho: S, tol: S) -> Result<TiltResult<S>> {
    validate_distribution(losses, base)?;
    if !(rho > S::zero()) {
        return Err(domain(format!("radius must be positive, got {rho}")));
    }
    if !(tol > S::zero()) {
        return Err(domain("tolerance must be positive"));
    }
    if all_equal_on_support(losses, base) {
        return Err(Error::InfeasibleTilt(
            "all losses are equal, no tilt moves away from the base distribution".into(),
        ));
    }
    let saturated = point_mass(losses, base);
    if rho >= saturated.achieved_kl {
        return Ok(saturated);
    }

    let (floor, ceiling) = (S::of(LAMBDA_FLOOR), S::of(LAMBDA_CEILING));
    let at_floor = tilt(losses, base, floor);
    if at_floor.achieved_kl < rho {
        return Ok(TiltResult {
            saturation: Saturation::LambdaFloor,
            ..at_floor
        });
    }
    let at_ceiling = tilt(losses, base, ceiling);
    if at_ceiling.achieved_kl > rho {
        return Ok(TiltResult {
            saturation: Saturation::LambdaCeiling,
            ..at_ceiling
        });
    }

    // KL is decreasing in λ: lo side has KL >= ρ, hi side KL <= ρ.
    let (mut lo, mut hi) = (floor.ln(), ceiling.ln());
    let mut best = if (at_floor.achieved_kl - rho).abs() <= (at_ceiling.achieved_kl - rho).abs() {
        at_floor
    } else {
        at_ceiling
    };
    let mut iterations = 0;
    while iterations < BISECTION_STEPS {
        iterations += 1;
        let mid = (lo + hi) / S::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        let candidate = tilt(losses, base, mid.exp());
        let gap = candidate.achieved_kl - rho;
        if gap.abs() < (best.achieved_kl - rho).abs() {
            best = candidate.clone();
        }
        if gap.abs() <= tol * S::of(1e-3) {
            break;
        }
        if gap > S::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.iterations = iterations;
    Ok(best)
}
