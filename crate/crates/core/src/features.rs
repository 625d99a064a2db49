//! Feature table for the log-linear policy class and the parameter vector type.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, domain, Error, Result};
use crate::linalg::{norm, sub};
use crate::scalar::Scalar;

/// Dense `(state, action) -> R^d` table with every row of Euclidean norm at most 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRepr<S>", into = "FeatureMapRepr<S>")]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct FeatureMap<S: Scalar> {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    table: Vec<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
struct FeatureMapRepr<S: Scalar> {
    d: usize,
    num_states: usize,
    num_actions: usize,
    table: Vec<S>,
}

impl<S: Scalar> TryFrom<FeatureMapRepr<S>> for FeatureMap<S> {
    type Error = Error;
    fn try_from(r: FeatureMapRepr<S>) -> Result<Self> {
        FeatureMap::new(r.num_states, r.num_actions, r.d, r.table)
    }
}

impl<S: Scalar> From<FeatureMap<S>> for FeatureMapRepr<S> {
    fn from(f: FeatureMap<S>) -> Self {
        Self {
            d: f.dim,
            num_states: f.num_states,
            num_actions: f.num_actions,
            table: f.table,
        }
    }
}

impl<S: Scalar> FeatureMap<S> {
    /// Builds a map from a row-major table of `num_states * num_actions * dim` entries.
    ///
    /// Fails if the table has the wrong length, contains non-finite entries, or
    /// any feature vector has norm above 1 (a few ulps of rounding are tolerated).
    pub fn new(num_states: usize, num_actions: usize, dim: usize, table: Vec<S>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(domain("feature map needs at least one state, action and dimension"));
        }
        if table.len() != num_states * num_actions * dim {
            return Err(domain(format!(
                "feature table has {} entries, expected {}",
                table.len(),
                num_states * num_actions * dim
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(domain("feature table contains non-finite entries"));
        }
        let limit = S::one() + S::of(8.0) * S::epsilon();
        for (row, chunk) in table.chunks(dim).enumerate() {
            let n = norm(chunk);
            if n > limit {
                return Err(domain(format!(
                    "feature vector for (s={}, a={}) has norm {} > 1",
                    row / num_actions,
                    row % num_actions,
                    n
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            table,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[S] {
        &self.table
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        check_index("state", state, self.num_states)
    }

    pub fn check_action(&self, action: usize) -> Result<()> {
        check_index("action", action, self.num_actions)
    }

    /// `psi(s, a)`
    pub fn feature(&self, state: usize, action: usize) -> Result<&[S]> {
        self.check_state(state)?;
        self.check_action(action)?;
        Ok(self.feature_unchecked(state, action))
    }

    pub(crate) fn feature_unchecked(&self, state: usize, action: usize) -> &[S] {
        let start = (state * self.num_actions + action) * self.dim;
        &self.table[start..start + self.dim]
    }

    /// `psi(s, a1) - psi(s, a2)`
    pub fn difference(&self, state: usize, a1: usize, a2: usize) -> Result<Vec<S>> {
        self.check_state(state)?;
        self.check_action(a1)?;
        self.check_action(a2)?;
        Ok(sub(
            self.feature_unchecked(state, a1),
            self.feature_unchecked(state, a2),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Policy parameter `theta` together with its norm bound `B`.
///
/// The bound is maintained by [`crate::policy::project_params`]; construction
/// only requires a positive bound and finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct PolicyParams<S: Scalar> {
    #[serde(rename = "B")]
    pub bound: S,
    pub theta: Vec<S>,
}

impl<S: Scalar> PolicyParams<S> {
    pub fn new(theta: Vec<S>, bound: S) -> Result<Self> {
        if !(bound > S::zero()) || !bound.is_finite() {
            return Err(domain(format!("parameter bound must be positive, got {bound}")));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(domain("parameter vector contains non-finite entries"));
        }
        Ok(Self { bound, theta })
    }

    pub fn zeros(dim: usize, bound: S) -> Result<Self> {
        Self::new(vec![S::zero(); dim], bound)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> S {
        norm(&self.theta)
    }

    pub fn is_within_bound(&self) -> bool {
        self.norm() <= self.bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_long_features() {
        let err = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.8, 0.7]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(FeatureMap::new(1, 2, 2, vec![1.0_f64, 0.0, 0.0]).is_err());
    }

    #[test]
    fn lookup_and_index_errors() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(fm.feature(0, 1).unwrap(), &[0.0, 1.0]);
        assert!(matches!(fm.feature(1, 0), Err(Error::Index { what: "state", .. })));
        assert!(matches!(fm.feature(0, 2), Err(Error::Index { what: "action", .. })));
    }

    #[test]
    fn json_layout() {
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            fm.to_json().unwrap(),
            r#"{"d":2,"num_states":1,"num_actions":2,"table":[1.0,0.0,0.0,1.0]}"#
        );
        let bad = r#"{"d":2,"num_states":1,"num_actions":2,"table":[2.0,0.0,0.0,1.0]}"#;
        assert!(FeatureMap::<f64>::from_json(bad).is_err());
    }

    #[test]
    fn params_json_uses_capital_b() {
        let p = PolicyParams::new(vec![0.5, -0.25], 2.0).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"B":2.0,"theta":[0.5,-0.25]}"#);
        let back: PolicyParams<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(PolicyParams::new(vec![0.0], 0.0).is_err());
    }
}
