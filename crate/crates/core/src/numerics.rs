//! Branch-stable logistic helpers and log-sum-exp.

use crate::scalar::Scalar;

/// Logistic function without overflow for large |t|.
#[inline]
pub fn sigmoid<S: Scalar>(t: S) -> S {
    if t >= S::zero() {
        S::one() / (S::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (S::one() + e)
    }
}

/// `log(1 + e^t)`.
#[inline]
pub fn softplus<S: Scalar>(t: S) -> S {
    if t > S::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `log σ(t) = -softplus(-t)`.
#[inline]
pub fn log_sigmoid<S: Scalar>(t: S) -> S {
    -softplus(-t)
}

/// `log Σ w_i e^{v_i}` over entries with positive weight; `-inf` if none.
pub fn weighted_log_sum_exp<S: Scalar>(values: &[S], weights: &[S]) -> S {
    let max = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > S::zero())
        .map(|(v, _)| *v)
        .fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let mut acc = S::zero();
    for (v, w) in values.iter().zip(weights) {
        if *w > S::zero() {
            acc = acc + *w * (*v - max).exp();
        }
    }
    max + acc.ln()
}

/// Plain log-sum-exp with max subtraction.
pub fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let acc: S = values.iter().map(|v| (*v - max).exp()).sum();
    max + acc.ln()
}
