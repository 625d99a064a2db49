//! Simulated data-parallel computation of the KLDPO kernel.
//!
//! The first `workers * microbatch` samples are split into contiguous
//! micro-batches. In `local` mode each worker tilts its own micro-batch around
//! its own mean loss and the per-worker kernels are averaged, so each worker
//! holds `1/workers` of the mass. In `all_gather` mode the losses are gathered
//! first and a single kernel is computed over all of them, which is exactly the
//! single-process full-batch kernel.

use serde::{Deserialize, Serialize};

use crate::dataset::PreferenceDataset;
use crate::error::{domain, Result};
use crate::experiments::fmt_f64;
use crate::experiments::stats::variance;
use crate::features::FeatureMap;
use crate::losses::{pointwise_losses_on, FeatureDesign};
use crate::policy::PolicyPair;
use crate::robust::kldpo_worst_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    Local,
    AllGather,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedReport {
    pub sync: SyncMode,
    pub workers: usize,
    pub microbatch: usize,
    pub tau: f64,
    pub losses: Vec<f64>,
    /// Kernel weights under `sync`, one per simulated sample.
    pub weights: Vec<f64>,
    /// Single-process kernel over the same samples.
    pub full_batch_weights: Vec<f64>,
    /// Mean loss each worker centers its tilt on.
    pub worker_mean_losses: Vec<f64>,
    /// Population variance of `worker_mean_losses`.
    pub mean_loss_variance: f64,
    pub max_abs_gap: f64,
    pub mean_abs_gap: f64,
}

impl DistributedReport {
    /// `index,worker,loss,weight,full_batch_weight`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,worker,loss,weight,full_batch_weight\n");
        for (i, ((l, w), f)) in self
            .losses
            .iter()
            .zip(&self.weights)
            .zip(&self.full_batch_weights)
            .enumerate()
        {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                i / self.microbatch,
                fmt_f64(*l),
                fmt_f64(*w),
                fmt_f64(*f)
            ));
        }
        out
    }
}

pub fn distributed_kernel_sim(
    ds: &PreferenceDataset,
    tau: f64,
    workers: usize,
    microbatch: usize,
    sync: SyncMode,
    pp: &PolicyPair<f64>,
    fm: &FeatureMap<f64>,
) -> Result<DistributedReport> {
    if workers == 0 || microbatch == 0 {
        return Err(domain("workers and microbatch must be positive"));
    }
    let total = workers
        .checked_mul(microbatch)
        .filter(|t| *t <= ds.len())
        .ok_or_else(|| domain(format!("{workers} workers x {microbatch} samples exceeds dataset size {}", ds.len())))?;
    pp.check_dims(fm)?;
    let design = FeatureDesign::from_samples(fm, &ds.samples()[..total])?;
    let losses = pointwise_losses_on(&design, pp)?;
    let full_batch_weights = kldpo_worst_kernel(&losses, &vec![1.0 / total as f64; total], tau)?;

    let (weights, worker_mean_losses) = match sync {
        SyncMode::AllGather => {
            let gathered: Vec<f64> = losses.chunks(microbatch).flatten().copied().collect();
            let weights = kldpo_worst_kernel(&gathered, &vec![1.0 / total as f64; total], tau)?;
            let global = gathered.iter().fold(0.0, |acc, l| acc + l) / total as f64;
            (weights, vec![global; workers])
        }
        SyncMode::Local => {
            let base = vec![1.0 / microbatch as f64; microbatch];
            let mut weights = Vec::with_capacity(total);
            let mut means = Vec::with_capacity(workers);
            for chunk in losses.chunks(microbatch) {
                means.push(chunk.iter().fold(0.0, |acc, l| acc + l) / microbatch as f64);
                let local = kldpo_worst_kernel(chunk, &base, tau)?;
                weights.extend(local.into_iter().map(|w| w / workers as f64));
            }
            (weights, means)
        }
    };
    let gaps: Vec<f64> = weights
        .iter()
        .zip(&full_batch_weights)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(DistributedReport {
        sync,
        workers,
        microbatch,
        tau,
        mean_loss_variance: variance(&worker_mean_losses).unwrap_or(0.0),
        max_abs_gap: gaps.iter().copied().fold(0.0, f64::max),
        mean_abs_gap: gaps.iter().sum::<f64>() / total as f64,
        losses,
        weights,
        full_batch_weights,
        worker_mean_losses,
    })
}
