//! Distributionally robust direct preference optimization on finite
//! prompt/response spaces with log-linear policies.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix `f64`, which is what the studies and the CLI use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod features;
pub mod fixtures;
pub mod linalg;
pub mod losses;
pub mod numerics;
pub mod policy;
pub mod prefgen;
pub mod rng;
pub mod robust;
pub mod scalar;
pub mod train;

pub use dataset::{empirical_covariance, feature_difference, DatasetMeta, PreferenceDataset, PreferenceSample};
pub use error::{Error, Result};
pub use linalg::{min_eigenvalue, symmetric_eigenvalues};
pub use prefgen::{MixtureMode, MixtureSpec};
pub use robust::{RobustKind, RobustSpec, Saturation};
pub use scalar::Scalar;

pub type FeatureMap = features::FeatureMap<f64>;
pub type PolicyParams = features::PolicyParams<f64>;
pub type PolicyPair = policy::PolicyPair<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type TabularReward = prefgen::TabularReward<f64>;
pub type SamplingSpec = prefgen::SamplingSpec<f64>;
pub type FeatureDesign = losses::FeatureDesign<f64>;
pub type LossConstants = losses::LossConstants<f64>;
pub type TiltResult = robust::TiltResult<f64>;
pub type WassersteinInstance = robust::WassersteinInstance<f64>;

pub type FeatureMapF32 = features::FeatureMap<f32>;
pub type PolicyParamsF32 = features::PolicyParams<f32>;
pub type PolicyPairF32 = policy::PolicyPair<f32>;
