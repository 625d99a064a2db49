//! Derivative-free 1-D minimization for the scalar dual problems.

use crate::scalar::Scalar;

/// Result of a bracketed scalar minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinimum<S> {
    pub argmin: S,
    pub value: S,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 10_000;

/// Golden-section search for a unimodal `f` on `[lo, hi]` until the bracket is
/// narrower than `tol`. Both endpoints are also evaluated, so minima sitting on
/// the boundary are returned exactly.
pub fn golden_section<S: Scalar>(f: impl Fn(S) -> S, lo: S, hi: S, tol: S) -> ScalarMinimum<S> {
    let inv_phi = (S::of(5.0).sqrt() - S::one()) / S::of(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a) > tol && iterations < MAX_ITERATIONS {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        // Stop once the bracket no longer shrinks in floating point.
        if c >= d {
            break;
        }
    }
    let mut best = ScalarMinimum {
        argmin: c,
        value: fc,
        iterations,
    };
    for (x, fx) in [(d, fd), (lo, f(lo)), (hi, f(hi))] {
        if fx < best.value {
            best.argmin = x;
            best.value = fx;
        }
    }
    best
}
