//! Preference tuples `z = (s, a1, a2, y)`, datasets, and the line-oriented file format.
//!
//! File layout: a JSON header `{"n":..,"seed":..,"alpha_o":..,"reward":..}` on the
//! first line, then one `s a1 a2 y` line per sample. Writing a parsed canonical
//! file reproduces it byte for byte.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::features::FeatureMap;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// One comparison. `label == true` means `first` was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferenceSample {
    pub state: usize,
    pub first: usize,
    pub second: usize,
    pub label: bool,
}

impl PreferenceSample {
    pub fn new(state: usize, first: usize, second: usize, label: bool) -> Result<Self> {
        if first == second {
            return Err(domain(format!(
                "sample in state {state} compares action {first} with itself"
            )));
        }
        Ok(Self {
            state,
            first,
            second,
            label,
        })
    }

    /// Same comparison with the two actions exchanged and the label flipped.
    pub fn swapped(&self) -> Self {
        Self {
            state: self.state,
            first: self.second,
            second: self.first,
            label: !self.label,
        }
    }

    /// `y` as 0 or 1.
    pub fn y<S: Scalar>(&self) -> S {
        if self.label {
            S::one()
        } else {
            S::zero()
        }
    }
}

/// Generation record stored as the dataset header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "n")]
    pub sample_count: usize,
    pub seed: u64,
    pub alpha_o: Option<f64>,
    pub reward: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    samples: Vec<PreferenceSample>,
    meta: DatasetMeta,
}

impl PreferenceDataset {
    pub fn new(samples: Vec<PreferenceSample>, meta: DatasetMeta) -> Result<Self> {
        if meta.sample_count != samples.len() {
            return Err(domain(format!(
                "header declares {} samples but {} were supplied",
                meta.sample_count,
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.first == s.second) {
            return Err(domain(format!("sample {s:?} compares an action with itself")));
        }
        Ok(Self { samples, meta })
    }

    /// Dataset with a synthetic header, for in-memory construction.
    pub fn from_samples(samples: Vec<PreferenceSample>) -> Result<Self> {
        let meta = DatasetMeta {
            sample_count: samples.len(),
            seed: 0,
            alpha_o: None,
            reward: "unspecified".to_string(),
        };
        Self::new(samples, meta)
    }

    pub fn samples(&self) -> &[PreferenceSample] {
        &self.samples
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sub-dataset of the given sample positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).copied().ok_or(Error::Index {
                    what: "sample",
                    index: i,
                    bound: self.samples.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = DatasetMeta {
            sample_count: samples.len(),
            ..self.meta.clone()
        };
        Self::new(samples, meta)
    }

    /// Concatenation keeping this dataset's header fields other than the count.
    pub fn concat(&self, other: &Self) -> Self {
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let meta = DatasetMeta {
            sample_count: samples.len(),
            ..self.meta.clone()
        };
        Self { samples, meta }
    }

    /// Checks every id against the feature map.
    pub fn validate_against<S: Scalar>(&self, fm: &FeatureMap<S>) -> Result<()> {
        for s in &self.samples {
            fm.check_state(s.state)?;
            fm.check_action(s.first)?;
            fm.check_action(s.second)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for s in &self.samples {
            writeln!(out, "{} {} {} {}", s.state, s.first, s.second, u8::from(s.label))
                .expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let meta: DatasetMeta = serde_json::from_str(header).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut samples = Vec::with_capacity(meta.sample_count);
        for (offset, line) in lines.enumerate() {
            let line_no = offset + 2;
            let perr = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 4 {
                return Err(perr(format!("expected `s a1 a2 y`, got {line:?}")));
            }
            let int = |t: &str| {
                t.parse::<usize>()
                    .map_err(|e| perr(format!("bad integer {t:?}: {e}")))
            };
            let label = match fields[3] {
                "0" => false,
                "1" => true,
                other => return Err(perr(format!("label must be 0 or 1, got {other:?}"))),
            };
            let sample = PreferenceSample::new(int(fields[0])?, int(fields[1])?, int(fields[2])?, label)
                .map_err(|e| perr(e.to_string()))?;
            samples.push(sample);
        }
        Self::new(samples, meta)
    }
}

/// `x = psi(s, a1) - psi(s, a2)`; does not depend on the policy.
pub fn feature_difference<S: Scalar>(sample: &PreferenceSample, fm: &FeatureMap<S>) -> Result<Vec<S>> {
    fm.difference(sample.state, sample.first, sample.second)
}

/// `Sigma_D = (1/n) sum_i x_i x_i^T`
pub fn empirical_covariance<S: Scalar>(ds: &PreferenceDataset, fm: &FeatureMap<S>) -> Result<Matrix<S>> {
    if ds.is_empty() {
        return Err(domain("covariance of an empty dataset"));
    }
    let mut cov = Matrix::zeros(fm.dim());
    for s in ds.samples() {
        cov.add_outer(S::one(), &feature_difference(s, fm)?);
    }
    let inv_n = S::one() / S::from_usize(ds.len()).expect("count fits scalar");
    Ok(cov.scaled(inv_n))
}
