//! Projected gradient descent for DPO, WDPO and KLDPO.
//!
//! Each epoch first records the full-dataset objective and gradient norm at the
//! current parameters, stops if the gradient norm is at most `stop_tol`, and
//! otherwise takes one full-batch step or one pass of mini-batch steps. The
//! iterate is projected onto the norm ball after every step.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{domain, Error, Result};
use crate::features::{FeatureMap, PolicyParams};
use crate::linalg::{axpy, dot, max_eigenvalue, norm, Matrix};
use crate::losses::{dpo_gradient_on, empirical_dpo_loss_on, weighted_gradient_on, FeatureDesign};
use crate::numerics::sigmoid;
use crate::policy::{project_params, PolicyPair};
use crate::rng::substream;
use crate::robust::{kldpo_loss_approx_on, kldpo_weights_on, wdpo_loss_approx_on, RobustSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dpo,
    Wdpo,
    Kldpo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dpo => "dpo",
            Method::Wdpo => "wdpo",
            Method::Kldpo => "kldpo",
        }
    }
}

/// Full batch, or mini-batches of a fixed size. Serialized as `"full"` or a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Name(String),
    Size(usize),
}

impl TryFrom<BatchRepr> for Batch {
    type Error = String;

    fn try_from(r: BatchRepr) -> std::result::Result<Self, String> {
        match r {
            BatchRepr::Name(s) if s == "full" => Ok(Batch::Full),
            BatchRepr::Name(s) => Err(format!("batch must be \"full\" or a count, got {s:?}")),
            BatchRepr::Size(0) => Err("batch size must be positive".into()),
            BatchRepr::Size(n) => Ok(Batch::Size(n)),
        }
    }
}

impl From<Batch> for BatchRepr {
    fn from(b: Batch) -> Self {
        match b {
            Batch::Full => BatchRepr::Name("full".into()),
            Batch::Size(n) => BatchRepr::Size(n),
        }
    }
}

fn default_stop_tol() -> f64 {
    1e-8
}

fn default_batch() -> Batch {
    Batch::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: Batch,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robust: RobustSpec,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    pub beta: f64,
    #[serde(rename = "B")]
    pub bound: f64,
}

impl TrainConfig {
    /// Full-batch configuration with default robust settings.
    pub fn new(method: Method, lr: f64, epochs: usize, beta: f64, bound: f64) -> Self {
        Self {
            method,
            lr,
            epochs,
            batch: Batch::Full,
            seed: 0,
            robust: RobustSpec::default(),
            stop_tol: default_stop_tol(),
            beta,
            bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(domain(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(domain("epochs must be at least 1"));
        }
        if !(self.beta > 0.0) || !(self.bound > 0.0) {
            return Err(domain("beta and B must be positive"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(domain("stop_tol must be non-negative"));
        }
        self.robust.validate()
    }

    /// Label used in reports, e.g. `wdpo(rho_o=0.05)`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Dpo => "dpo".into(),
            Method::Wdpo => format!("wdpo(rho_o={})", self.robust.rho_o),
            Method::Kldpo => format!("kldpo(tau={})", self.robust.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct TrainReport<S: Scalar> {
    pub final_params: PolicyParams<S>,
    pub loss_trace: Vec<S>,
    pub grad_norm_trace: Vec<S>,
    pub epochs_run: usize,
    pub converged: bool,
}

impl<S: Scalar> TrainReport<S> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,loss,grad_norm` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,grad_norm\n");
        for (e, (l, g)) in self.loss_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            out.push_str(&format!("{e},{},{}\n", l.as_f64(), g.as_f64()));
        }
        out
    }
}

/// Objective minimized by `cfg.method` on a design.
pub fn objective_on<S: Scalar>(cfg: &TrainConfig, design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<S> {
    match cfg.method {
        Method::Dpo => empirical_dpo_loss_on(design, pp),
        Method::Wdpo => wdpo_loss_approx_on(design, pp, S::of(cfg.robust.rho_o)),
        Method::Kldpo => kldpo_loss_approx_on(design, pp, S::of(cfg.robust.tau)),
    }
}

pub fn objective<S: Scalar>(
    cfg: &TrainConfig,
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<S> {
    objective_on(cfg, &FeatureDesign::new(fm, ds)?, pp)
}

/// Gradient of the WDPO surrogate. At `theta = theta_ref` the subgradient 0 is
/// used for the regularizer.
fn wdpo_gradient_on<S: Scalar>(design: &FeatureDesign<S>, pp: &PolicyPair<S>, rho_o: S) -> Result<Vec<S>> {
    let mut grad = dpo_gradient_on(design, pp)?;
    if rho_o == S::zero() {
        return Ok(grad);
    }
    let delta = pp.delta();
    let delta_norm = norm(&delta);
    if delta_norm == S::zero() {
        return Ok(grad);
    }
    let beta = pp.beta;
    let scores = design.scaled_scores(pp);
    let residuals: Vec<S> = scores.iter().enumerate().map(|(i, t)| sigmoid(*t) - design.y(i)).collect();
    let squares: Vec<S> = residuals.iter().map(|r| *r * *r).collect();
    let mean_sq = design.weighted_mean(&squares);
    let rms = mean_sq.sqrt();
    // d/dθ of ρ_o β ||Δ|| sqrt(m): norm part plus residual part.
    axpy(rho_o * beta * rms / delta_norm, &delta, &mut grad);
    if rms > S::zero() {
        let coef = rho_o * beta * delta_norm / rms;
        for (i, (t, r)) in scores.iter().zip(&residuals).enumerate() {
            let dr = beta * sigmoid(*t) * sigmoid(-*t);
            axpy(coef * design.weight(i) * *r * dr, design.x(i), &mut grad);
        }
    }
    Ok(grad)
}

/// Gradient of the method's objective. KLDPO kernel weights are held fixed.
pub fn robust_gradient_on<S: Scalar>(cfg: &TrainConfig, design: &FeatureDesign<S>, pp: &PolicyPair<S>) -> Result<Vec<S>> {
    match cfg.method {
        Method::Dpo => dpo_gradient_on(design, pp),
        Method::Wdpo => wdpo_gradient_on(design, pp, S::of(cfg.robust.rho_o)),
        Method::Kldpo => {
            let weights = kldpo_weights_on(design, pp, S::of(cfg.robust.tau))?;
            let scores = design.scaled_scores(pp);
            Ok(weighted_gradient_on(design, pp, &scores, |i| weights[i]))
        }
    }
}

pub fn robust_gradient<S: Scalar>(
    cfg: &TrainConfig,
    pp: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    batch: &PreferenceDataset,
) -> Result<Vec<S>> {
    robust_gradient_on(cfg, &FeatureDesign::new(fm, batch)?, pp)
}

/// Central differences `(f(θ + h e_j) - f(θ - h e_j)) / 2h`.
pub fn finite_difference_gradient<S: Scalar>(f: impl Fn(&[S]) -> S, theta: &[S], step: S) -> Vec<S> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            probe[j] = theta[j] + step;
            let up = f(&probe);
            probe[j] = theta[j] - step;
            let down = f(&probe);
            probe[j] = theta[j];
            (up - down) / (S::of(2.0) * step)
        })
        .collect()
}

/// `1 / (β²/4 · λ_max(Σ_D))`, a step size under which full-batch DPO descends.
pub fn smoothness_step<S: Scalar>(design: &FeatureDesign<S>, beta: S) -> Result<S> {
    if design.is_empty() {
        return Err(domain("empty dataset"));
    }
    let lmax = max_eigenvalue(&design.covariance())?;
    if !(lmax > S::zero()) {
        return Err(domain("feature covariance is zero"));
    }
    Ok(S::of(4.0) / (beta * beta * lmax))
}

fn check_finite<S: Scalar>(values: &[S], stage: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage() })
    }
}

pub fn train_on<S: Scalar>(cfg: &TrainConfig, init: &PolicyPair<S>, design: &FeatureDesign<S>) -> Result<TrainReport<S>> {
    cfg.validate()?;
    if S::of(cfg.beta) != init.beta {
        return Err(domain(format!(
            "config beta {} differs from policy pair beta {}",
            cfg.beta, init.beta
        )));
    }
    if design.is_empty() {
        return Err(domain("empty dataset"));
    }
    if init.dim() != design.dim() {
        return Err(domain("parameter and feature dimensions differ"));
    }
    let bound = S::of(cfg.bound);
    let start = PolicyParams {
        theta: init.current.theta.clone(),
        bound,
    };
    let mut pp = init.with_theta(Vec::new());
    pp.current = project_params(&start);
    let lr = S::of(cfg.lr);
    let mut order: Vec<usize> = (0..design.len()).collect();
    let mut rng = substream(cfg.seed, "train/batches");

    let mut report = TrainReport {
        final_params: pp.current.clone(),
        loss_trace: Vec::with_capacity(cfg.epochs),
        grad_norm_trace: Vec::with_capacity(cfg.epochs),
        epochs_run: 0,
        converged: false,
    };
    for epoch in 0..cfg.epochs {
        let loss = objective_on(cfg, design, &pp)?;
        let grad = robust_gradient_on(cfg, design, &pp)?;
        check_finite(&[loss], || format!("loss at epoch {epoch}"))?;
        check_finite(&grad, || format!("gradient at epoch {epoch}"))?;
        let gnorm = norm(&grad);
        report.loss_trace.push(loss);
        report.grad_norm_trace.push(gnorm);
        report.epochs_run = epoch + 1;
        if gnorm <= S::of(cfg.stop_tol) {
            report.converged = true;
            break;
        }
        match cfg.batch {
            Batch::Full => step(&mut pp, lr, &grad),
            Batch::Size(size) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let sub = design.select(chunk);
                    let g = robust_gradient_on(cfg, &sub, &pp)?;
                    check_finite(&g, || format!("mini-batch gradient at epoch {epoch}"))?;
                    step(&mut pp, lr, &g);
                }
            }
        }
        log::trace!("epoch {epoch}: loss {loss}, grad norm {gnorm}");
    }
    report.final_params = pp.current;
    Ok(report)
}

fn step<S: Scalar>(pp: &mut PolicyPair<S>, lr: S, grad: &[S]) {
    axpy(-lr, grad, &mut pp.current.theta);
    pp.current = project_params(&pp.current);
}

/// Trains from `init` on `ds` with the method and schedule in `cfg`.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    init: &PolicyPair<S>,
    fm: &FeatureMap<S>,
    ds: &PreferenceDataset,
) -> Result<TrainReport<S>> {
    init.check_dims(fm)?;
    train_on(cfg, init, &FeatureDesign::new(fm, ds)?)
}

/// `sqrt(uᵀ (Σ + λI) u)`
pub fn regularized_norm<S: Scalar>(cov: &Matrix<S>, lambda: S, u: &[S]) -> S {
    (cov.quadratic_form(u) + lambda * dot(u, u)).max(S::zero()).sqrt()
}
