//! Estimation-error rate studies on realizable data.
//!
//! Labels come from the reward induced by `theta_true`, which makes `theta_true`
//! the population DPO minimizer. DPO errors are measured against it in the
//! `(Σ_D + λI)` norm of each cell's own dataset. Robust methods have no closed
//! form minimizer, so they are compared in the Euclidean norm with the same
//! method trained on one large reference dataset.
//!
//! Datasets are compressed to their distinct rows before training, so cost per
//! epoch is bounded by the number of distinct comparisons rather than `n`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::experiments::env::Environment;
use crate::experiments::fmt_f64;
use crate::experiments::stats::{ls_slope, mean, median};
use crate::features::PolicyParams;
use crate::linalg::{norm, sub};
use crate::losses::FeatureDesign;
use crate::policy::PolicyPair;
use crate::prefgen::{realizable_reward, sample_dataset, TabularReward};
use crate::rng::derive_seed;
use crate::train::{regularized_norm, smoothness_step, train_on, Method, TrainConfig, TrainReport};

fn default_lambda() -> f64 {
    1e-3
}

fn default_lr_scale() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudySpec {
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub theta_true: PolicyParams<f64>,
    pub env: Environment,
    pub reference_n: usize,
    pub methods: Vec<TrainConfig>,
    pub seed: u64,
    /// Ridge added to `Σ_D` in the DPO error norm.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Replace each config's learning rate by `4 / (β² λ_max(Σ_D))` of the cell's data.
    #[serde(default = "default_true")]
    pub lr_from_smoothness: bool,
    /// Multiplier applied to the smoothness-derived learning rate.
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
}

impl RateStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(domain("n_grid must be non-empty, positive and strictly increasing"));
        }
        if self.repetitions < 3 {
            return Err(domain("need at least 3 repetitions"));
        }
        if self.methods.is_empty() {
            return Err(domain("need at least one method"));
        }
        let beta = self.methods[0].beta;
        if self.methods.iter().any(|m| m.beta != beta) {
            return Err(domain("all methods must share beta, which also defines the realizable reward"));
        }
        if self.theta_true.dim() != self.env.fm.dim() {
            return Err(domain("theta_true dimension does not match the environment"));
        }
        let needs_reference = self.methods.iter().any(|m| m.method != Method::Dpo);
        if needs_reference && self.reference_n == 0 {
            return Err(domain("robust methods need a positive reference_n"));
        }
        if !(self.lr_scale > 0.0) {
            return Err(domain("lr_scale must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(domain("lambda must be positive"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    fn beta(&self) -> f64 {
        self.methods[0].beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub method: String,
    pub n: usize,
    pub rep: usize,
    pub error: Option<f64>,
    pub epochs_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub method: String,
    pub n: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub method: String,
    /// Least-squares slope of log median error against log n; `None` for one n.
    pub slope: Option<f64>,
    pub first_median: Option<f64>,
    pub last_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFit {
    pub method: String,
    pub n: usize,
    pub theta: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub cells: Vec<RateCell>,
    pub summary: Vec<RateSummary>,
    pub fits: Vec<RateFit>,
    pub references: Vec<ReferenceFit>,
    pub failures: Vec<String>,
}

impl RateReport {
    /// `method,n,rep,error,epochs_run,converged`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,rep,error,epochs_run,converged\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.method,
                c.n,
                c.rep,
                c.error.map(fmt_f64).unwrap_or_default(),
                c.epochs_run,
                c.converged
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            summary: &'a [RateSummary],
            fits: &'a [RateFit],
            references: &'a [ReferenceFit],
            failures: &'a [String],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            summary: &self.summary,
            fits: &self.fits,
            references: &self.references,
            failures: &self.failures,
        })?)
    }

    pub fn fit(&self, method: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.method == method)
    }

    pub fn medians(&self, method: &str) -> Vec<Option<f64>> {
        self.summary.iter().filter(|s| s.method == method).map(|s| s.median).collect()
    }
}

struct Harness<'a> {
    spec: &'a RateStudySpec,
    reward: TabularReward<f64>,
    init: PolicyPair<f64>,
}

impl Harness<'_> {
    fn design(&self, n: usize, label: &str) -> Result<FeatureDesign<f64>> {
        let env = &self.spec.env;
        let seed = derive_seed(self.spec.seed, label);
        let ds = sample_dataset(&env.fm, &env.sampling_spec(n, seed, None, "realizable"), &self.reward)?;
        Ok(FeatureDesign::new(&env.fm, &ds)?.compress())
    }

    fn fit(&self, cfg: &TrainConfig, design: &FeatureDesign<f64>) -> Result<TrainReport<f64>> {
        let mut cfg = cfg.clone();
        if self.spec.lr_from_smoothness {
            cfg.lr = self.spec.lr_scale * smoothness_step(design, cfg.beta)?;
        }
        let init = PolicyPair::new(
            PolicyParams::zeros(design.dim(), cfg.bound)?,
            self.init.reference.clone(),
            cfg.beta,
        )?;
        train_on(&cfg, &init, design)
    }
}

/// Trains every method at every `n` and repetition and fits log-log slopes.
pub fn rate_experiment(spec: &RateStudySpec) -> Result<RateReport> {
    spec.validate()?;
    let beta = spec.beta();
    let reference = PolicyParams::zeros(spec.env.fm.dim(), spec.theta_true.bound)?;
    let reward = realizable_reward(&spec.theta_true, &reference, beta, &spec.env.fm)?;
    let h = Harness {
        spec,
        reward,
        init: PolicyPair::new(reference.clone(), reference, beta)?,
    };
    let mut failures = Vec::new();

    let mut references = Vec::new();
    if spec.methods.iter().any(|m| m.method != Method::Dpo) {
        let design = h.design(spec.reference_n, "rate/reference")?;
        for cfg in spec.methods.iter().filter(|m| m.method != Method::Dpo) {
            match h.fit(cfg, &design) {
                Ok(r) => references.push(ReferenceFit {
                    method: cfg.label(),
                    n: spec.reference_n,
                    theta: r.final_params.theta,
                    epochs_run: r.epochs_run,
                    converged: r.converged,
                }),
                Err(e) => failures.push(format!("reference fit for {}: {e}", cfg.label())),
            }
        }
    }

    let mut cells = Vec::new();
    for &n in &spec.n_grid {
        for rep in 0..spec.repetitions {
            let design = h.design(n, &format!("rate/n{n}/rep{rep}"))?;
            let cov = design.covariance();
            for cfg in &spec.methods {
                let method = cfg.label();
                let target = if cfg.method == Method::Dpo {
                    Some(spec.theta_true.theta.clone())
                } else {
                    references.iter().find(|r| r.method == method).map(|r| r.theta.clone())
                };
                let outcome = target.ok_or_else(|| domain("missing reference fit")).and_then(|t| {
                    let r = h.fit(cfg, &design)?;
                    let diff = sub(&r.final_params.theta, &t);
                    let err = if cfg.method == Method::Dpo {
                        regularized_norm(&cov, spec.lambda, &diff)
                    } else {
                        norm(&diff)
                    };
                    Ok((err, r.epochs_run, r.converged))
                });
                let cell = match outcome {
                    Ok((err, epochs_run, converged)) => RateCell {
                        method,
                        n,
                        rep,
                        error: Some(err),
                        epochs_run,
                        converged,
                    },
                    Err(e) => {
                        failures.push(format!("{method} n={n} rep={rep}: {e}"));
                        RateCell {
                            method,
                            n,
                            rep,
                            error: None,
                            epochs_run: 0,
                            converged: false,
                        }
                    }
                };
                cells.push(cell);
            }
        }
    }

    let mut summary = Vec::new();
    let mut fits = Vec::new();
    for cfg in &spec.methods {
        let method = cfg.label();
        let mut points = Vec::new();
        let mut medians = Vec::new();
        for &n in &spec.n_grid {
            let errs: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method && c.n == n)
                .filter_map(|c| c.error)
                .collect();
            let med = median(&errs);
            if let Some(m) = med.filter(|m| *m > 0.0) {
                points.push(((n as f64).ln(), m.ln()));
            }
            medians.push(med);
            summary.push(RateSummary {
                method: method.clone(),
                n,
                median: med,
                mean: mean(&errs),
            });
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        fits.push(RateFit {
            method,
            slope: ls_slope(&xs, &ys),
            first_median: medians.first().copied().flatten(),
            last_median: medians.last().copied().flatten(),
        });
    }
    Ok(RateReport {
        cells,
        summary,
        fits,
        references,
        failures,
    })
}
