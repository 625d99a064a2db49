//! Non-robust DPO loss family on log-linear policies, with closed-form
//! derivatives and the strong-convexity / boundedness constants.
//!
//! Because `grad_theta h = psi(s,a1) - psi(s,a2) =: x` for log-linear policies,
//! the pointwise loss depends on `theta` only through `beta * (theta - theta_ref)^T x`,
//! which makes gradient and Hessian closed-form:
//!
//! ```text
//! grad  = (1/n) Σ β (σ(βh_i) - y_i) x_i
//! hess  = (1/n) Σ β² σ(βh_i) σ(-βh_i) x_i x_iᵀ
//! ```
//!
//! Dataset reductions accumulate sequentially in sample order, so repeated
//! evaluations are bitwise identical.

use serde::{Deserialize, Serialize};

use crate::dataset::{feature_difference, PreferenceDataset, PreferenceSample};
use crate::error::{domain, Result};
use crate::features::FeatureMap;
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::numerics::{sigmoid, softplus};
use crate::policy::PolicyPair;
use crate::scalar::Scalar;

/// Feature differences, labels and probability masses of a dataset, extracted once.
///
/// Rows built from a dataset carry mass `1/n` each. [`FeatureDesign::compress`]
/// merges identical rows and adds their masses, which leaves every loss and
/// derivative unchanged up to summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDesign<S: Scalar> {
    dim: usize,
    xs: Vec<S>,
    ys: Vec<S>,
    weights: Vec<S>,
}

impl<S: Scalar> FeatureDesign<S> {
    pub fn new(fm: &FeatureMap<S>, ds: &PreferenceDataset) -> Result<Self> {
        Self::from_samples(fm, ds.samples())
    }

    pub fn from_samples(fm: &FeatureMap<S>, samples: &[PreferenceSample]) -> Result<Self> {
        let mut xs = Vec::with_capacity(samples.len() * fm.dim());
        let mut ys = Vec::with_capacity(samples.len());
        for s in samples {
            xs.extend(feature_difference(s, fm)?);
            ys.push(s.y());
        }
        Ok(Self::uniform(fm.dim(), xs, ys))
    }

    /// Builds a design from raw `(x, y)` rows.
    pub fn from_rows(dim: usize, rows: &[(Vec<S>, bool)]) -> Result<Self> {
        let mut xs = Vec::with_capacity(rows.len() * dim);
        let mut ys = Vec::with_capacity(rows.len());
        for (x, y) in rows {
            if x.len() != dim {
                return Err(domain("design row has the wrong dimension"));
            }
            xs.extend_from_slice(x);
            ys.push(if *y { S::one() } else { S::zero() });
        }
        Ok(Self::uniform(dim, xs, ys))
    }

    fn uniform(dim: usize, xs: Vec<S>, ys: Vec<S>) -> Self {
        let w = if ys.is_empty() {
            S::zero()
        } else {
            S::one() / S::from_usize(ys.len()).expect("count fits scalar")
        };
        let weights = vec![w; ys.len()];
        Self { dim, xs, ys, weights }
    }

    /// Merges rows with identical `(x, y)`, keeping first-occurrence order.
    pub fn compress(&self) -> Self {
        let mut index: std::collections::HashMap<(Vec<u64>, bool), usize> = std::collections::HashMap::new();
        let mut out = Self {
            dim: self.dim,
            xs: Vec::new(),
            ys: Vec::new(),
            weights: Vec::new(),
        };
        for i in 0..self.len() {
            let key = (
                self.x(i).iter().map(|v| v.as_f64().to_bits()).collect(),
                self.ys[i] == S::one(),
            );
            match index.get(&key) {
                Some(&j) => out.weights[j] = out.weights[j] + self.weights[i],
                None => {
                    index.insert(key, out.ys.len());
                    out.xs.extend_from_slice(self.x(i));
                    out.ys.push(self.ys[i]);
                    out.weights.push(self.weights[i]);
                }
            }
        }
        out
    }

    /// Whether every row has the same mass.
    pub fn is_uniform(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[S] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> S {
        self.ys[i]
    }

    pub fn weight(&self, i: usize) -> S {
        self.weights[i]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// Rows at the given positions, in order, with masses renormalized.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut xs = Vec::with_capacity(indices.len() * self.dim);
        let mut ys = Vec::with_capacity(indices.len());
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(self.x(i));
            ys.push(self.ys[i]);
            weights.push(self.weights[i]);
        }
        if self.is_uniform() {
            return Self::uniform(self.dim, xs, ys);
        }
        let total = weights.iter().fold(S::zero(), |acc, w| acc + *w);
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self {
            dim: self.dim,
            xs,
            ys,
            weights,
        }
    }

    /// `Σ_i w_i x_i x_iᵀ`
    pub fn covariance(&self) -> Matrix<S> {
        let mut cov = Matrix::zeros(self.dim);
        for i in 0..self.len() {
            cov.add_outer(self.weights[i], self.x(i));
        }
        cov
    }

    /// `Σ_i w_i v_i`, accumulated in row order.
    pub fn weighted_mean(&self, values: &[S]) -> S {
        self.weights
            .iter()
            .zip(values)
            .fold(S::zero(), |acc, (w, v)| acc + *w * *v)
    }

    /// `beta * h_i` for every row.
    pub fn scaled_scores(&self, pp: &PolicyPair<S>) -> Vec<S> {
        let delta = pp.delta();
        (0..self.len()).map(|i| pp.beta * dot(&delta, self.x(i))).collect()
    }

    pub(crate) fn check(&self, pp: &PolicyPair<S>) -> Result<()> {
        if self.is_empty() {
            return Err(domain("empty dataset"));
        }
        if pp.dim() != self.dim {
            return Err(domain(format!(
                "parameter dimension {} does not match feature dimension {}",
                pp.dim(),
                self.dim
            )));
        }
        Ok(())
    }

}

/// Pointwise loss as a function of `t = beta * h` and the label.
#[inline]
pub fn loss_from_scaled_score<S: Scalar>(t: S, y: S) -> S {
    if y == S::one() {
        softplus(-t)
    } else if y == S::zero() {
        softplus(t)
    } else {
        y * softplus(-t) + (S::one() - y) * softplus(t)
    }
}

/// `-y log σ(βh(a1,a2)) - (1-y) log σ(βh(a2,a1))`
pub fn pointwise_dpo_loss<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
) -> Result<S> {
    pp.check_dims(fm)?;
    let x = feature_difference(sample, fm)?;
    let t = pp.beta * dot(&pp.delta(), &x);
    Ok(loss_from_scaled_score(t, sample.y()))
}

/// Per-sample losses in dataset order.
pub fn pointwise_losses_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<Vec<S>> {
    design.check(pp)?;
    Ok(design
        .scaled_scores(pp)
        .into_iter()
        .enumerate()
        .map(|(i, t)| loss_from_scaled_score(t, design.y(i)))
        .collect())
}

pub fn empirical_dpo_loss_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<S> {
    let losses = pointwise_losses_on(design, pp)?;
    Ok(design.weighted_mean(&losses))
}

/// Mean pointwise loss over the dataset.
pub fn empirical_dpo_loss<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<S> {
    empirical_dpo_loss_on(&FeatureDesign::new(fm, ds)?, pp)
}

/// `grad_theta l_i = beta * (σ(βh_i) - y_i) * x_i`, summed with the given weights.
pub(crate) fn weighted_gradient_on<S: Scalar>(
    design: &FeatureDesign<S>,
    pp: &PolicyPair<S>,
    scores: &[S],
    weights: impl Fn(usize) -> S,
) -> Vec<S> {
    let mut grad = vec![S::zero(); design.dim()];
    for (i, t) in scores.iter().enumerate() {
        let coef = weights(i) * pp.beta * (sigmoid(*t) - design.y(i));
        axpy(coef, design.x(i), &mut grad);
    }
    grad
}

pub fn dpo_gradient_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<Vec<S>> {
    design.check(pp)?;
    let scores = design.scaled_scores(pp);
    Ok(weighted_gradient_on(design, pp, &scores, |i| design.weight(i)))
}

/// Gradient of [`empirical_dpo_loss`] in `theta`.
pub fn dpo_gradient<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<Vec<S>> {
    dpo_gradient_on(&FeatureDesign::new(fm, ds)?, pp)
}

pub fn dpo_hessian_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<Matrix<S>> {
    design.check(pp)?;
    let mut hess = Matrix::zeros(design.dim());
    let beta2 = pp.beta * pp.beta;
    for (i, t) in design.scaled_scores(pp).iter().enumerate() {
        hess.add_outer(design.weight(i) * beta2 * sigmoid(*t) * sigmoid(-*t), design.x(i));
    }
    Ok(hess)
}

/// Hessian of [`empirical_dpo_loss`] in `theta`. No second derivative of `h` appears.
pub fn dpo_hessian<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<Matrix<S>> {
    dpo_hessian_on(&FeatureDesign::new(fm, ds)?, pp)
}

/// `||grad_x l|| = beta * |y - σ(βh)| * ||theta - theta_ref||`, from `t = βh`.
#[inline]
pub(crate) fn input_gradient_norm_from_score<S: Scalar>(t: S, y: S, beta: S, delta_norm: S) -> S {
    beta * (y - sigmoid(t)).abs() * delta_norm
}

/// Norm of the loss gradient with respect to the feature difference `x` (label held fixed).
pub fn input_gradient_norm<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
) -> Result<S> {
    pp.check_dims(fm)?;
    let x = feature_difference(sample, fm)?;
    let delta = pp.delta();
    let t = pp.beta * dot(&delta, &x);
    Ok(input_gradient_norm_from_score(t, sample.y(), pp.beta, norm(&delta)))
}

/// `grad_x l = beta * (σ(βh) - y) * (theta - theta_ref)`.
pub fn input_gradient<S: Scalar>(
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    sample: &PreferenceSample,
) -> Result<Vec<S>> {
    pp.check_dims(fm)?;
    let x = feature_difference(sample, fm)?;
    let delta = pp.delta();
    let t = pp.beta * dot(&delta, &x);
    let coef = pp.beta * (sigmoid(t) - sample.y());
    Ok(delta.into_iter().map(|d| coef * d).collect())
}

/// Strong-convexity modulus `gamma`, loss bound `K`, and generic loss bound `L = K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct LossConstants<S: Scalar> {
    pub beta: S,
    #[serde(rename = "B")]
    pub bound: S,
    pub gamma: S,
    #[serde(rename = "K")]
    pub k: S,
    #[serde(rename = "L")]
    pub l: S,
}

impl<S: Scalar> LossConstants<S> {
    /// True when the stored constants match a fresh recomputation within `tol`.
    pub fn is_consistent(&self, tol: S) -> bool {
        let fresh = loss_constants(self.beta, self.bound);
        (fresh.gamma - self.gamma).abs() <= tol
            && (fresh.k - self.k).abs() <= tol
            && (fresh.l - self.l).abs() <= tol
    }
}

/// `gamma = β² e^{4βB} / (1 + e^{4βB})²`, `K = |log σ(-4βB)|`.
pub fn loss_constants<S: Scalar>(beta: S, bound: S) -> LossConstants<S> {
    let edge = S::of(4.0) * beta * bound;
    // e^u/(1+e^u)^2 = σ(u)σ(-u), evaluated without overflow.
    let gamma = beta * beta * sigmoid(edge) * sigmoid(-edge);
    let k = softplus(edge);
    LossConstants {
        beta,
        bound,
        gamma,
        k,
        l: k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PolicyParams;

    fn fixture() -> (FeatureMap<f64>, PreferenceSample) {
        let fm = FeatureMap::new(1, 2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        (fm, PreferenceSample::new(0, 0, 1, true).unwrap())
    }

    fn pair(theta: Vec<f64>, beta: f64) -> PolicyPair<f64> {
        PolicyPair::with_uniform_reference(PolicyParams::new(theta, 4.0).unwrap(), beta).unwrap()
    }

    #[test]
    fn loss_at_reference_is_ln2() {
        let (fm, s) = fixture();
        let pp = pair(vec![0.0, 0.0], 1.0);
        for sample in [s, s.swapped()] {
            let l = pointwise_dpo_loss(&pp, &fm, &sample).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_at_unit_score() {
        // beta*h = 1 with x = (0.5, -0.5) and theta = (1, -1), beta = 1
        let (fm, s) = fixture();
        let pp = pair(vec![1.0, -1.0], 1.0);
        let l = pointwise_dpo_loss(&pp, &fm, &s).unwrap();
        // ln(1 + e^{-1})
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn label_flip_with_negated_score() {
        let (fm, s) = fixture();
        let pp = pair(vec![0.7, -0.1], 1.3);
        let neg = pair(vec![-0.7, 0.1], 1.3);
        let flipped = PreferenceSample { label: false, ..s };
        let a = pointwise_dpo_loss(&pp, &fm, &s).unwrap();
        let b = pointwise_dpo_loss(&neg, &fm, &flipped).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn empirical_examples() {
        let (fm, s) = fixture();
        let pp = pair(vec![0.9, 0.2], 0.7);
        let same = PreferenceDataset::from_samples(vec![s; 3]).unwrap();
        let point = pointwise_dpo_loss(&pp, &fm, &s).unwrap();
        assert!((empirical_dpo_loss(&pp, &fm, &same).unwrap() - point).abs() < 1e-15);

        let other = PreferenceSample { label: false, ..s };
        let two = PreferenceDataset::from_samples(vec![s, other]).unwrap();
        let b = pointwise_dpo_loss(&pp, &fm, &other).unwrap();
        assert!((empirical_dpo_loss(&pp, &fm, &two).unwrap() - (point + b) / 2.0).abs() < 1e-15);

        let zero = pair(vec![0.0, 0.0], 0.7);
        assert!((empirical_dpo_loss(&zero, &fm, &two).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let empty = PreferenceDataset::from_samples(vec![]).unwrap();
        assert!(empirical_dpo_loss(&pp, &fm, &empty).is_err());
        assert!(dpo_gradient(&pp, &fm, &empty).is_err());
        assert!(dpo_hessian(&pp, &fm, &empty).is_err());
    }

    #[test]
    fn gradient_examples() {
        let (fm, s) = fixture();
        let beta = 1.7;
        let zero = pair(vec![0.0, 0.0], beta);
        let single = PreferenceDataset::from_samples(vec![s]).unwrap();
        let g = dpo_gradient(&zero, &fm, &single).unwrap();
        // -(beta/2) x with x = (0.5, -0.5)
        assert!((g[0] + beta / 2.0 * 0.5).abs() < 1e-15);
        assert!((g[1] - beta / 2.0 * 0.5).abs() < 1e-15);

        let mirrored = PreferenceDataset::from_samples(vec![s, PreferenceSample { first: 1, second: 0, ..s }]).unwrap();
        let g = dpo_gradient(&zero, &fm, &mirrored).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hessian_at_reference_is_quarter_beta_squared_covariance() {
        let fm = FeatureMap::new(2, 3, 2, vec![0.5, 0.1, -0.3, 0.6, 0.0, -0.9, 0.2, 0.2, 0.7, -0.1, -0.4, 0.4]).unwrap();
        let ds = PreferenceDataset::from_samples(vec![
            PreferenceSample::new(0, 0, 1, true).unwrap(),
            PreferenceSample::new(1, 2, 0, false).unwrap(),
            PreferenceSample::new(0, 2, 1, true).unwrap(),
        ])
        .unwrap();
        let beta = 0.8;
        let pp = pair(vec![0.0, 0.0], beta);
        let h = dpo_hessian(&pp, &fm, &ds).unwrap();
        let cov = crate::dataset::empirical_covariance(&ds, &fm).unwrap();
        let expect = cov.scaled(beta * beta / 4.0);
        for (a, b) in h.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn input_gradient_examples() {
        let (fm, s) = fixture();
        let zero = pair(vec![0.0, 0.0], 2.0);
        assert_eq!(input_gradient_norm(&zero, &fm, &s).unwrap(), 0.0);
        // beta = 2, ||delta|| = 1 and h = 0: delta orthogonal to x = (0.5, -0.5).
        let r = 0.5_f64.sqrt();
        let pp = pair(vec![r, r], 2.0);
        assert!((input_gradient_norm(&pp, &fm, &s).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_examples() {
        let c = loss_constants(1.0_f64, 0.0);
        assert_eq!(c.gamma, 0.25);
        assert!((c.k - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(c.l, c.k);
        let c = loss_constants(0.1_f64, 1.0);
        let e = 0.4_f64.exp();
        let naive = 0.01 * e / ((1.0 + e) * (1.0 + e));
        assert!((c.gamma - naive).abs() < 1e-17);
        assert!(c.is_consistent(1e-14));
        // Large arguments stay finite.
        let big = loss_constants(10.0_f64, 100.0);
        assert!(big.gamma.is_finite() && big.gamma >= 0.0);
        assert!((big.k - 4000.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_decreases_in_bound() {
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let b = i as f64 * 0.05;
            let g = loss_constants(0.7, b).gamma;
            assert!(g < prev || i == 0);
            prev = g;
        }
    }
}
