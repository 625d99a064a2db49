//! Type-2 Wasserstein worst case over a finite candidate support.
//!
//! Atoms are embedded by their feature difference `x`; transport is Euclidean
//! and never crosses label classes. The dual
//!
//! ```text
//! g(η) = η ρ² + (1/n) Σ_i max_{j ~ i} (L_j - η ||x_j - x_{s_i}||²)
//! ```
//!
//! is convex and piecewise linear in `η`, and on a finite support it coincides
//! with the transport LP, which [`wasserstein_primal_oracle`] solves by vertex
//! enumeration for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, domain, Error, Result};
use crate::losses::{loss_from_scaled_score, FeatureDesign};
use crate::policy::PolicyPair;
use crate::robust::search::golden_section;
use crate::scalar::Scalar;

/// Candidate atoms, their embedding, label classes, and where each sample sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct WassersteinInstance<S: Scalar> {
    pub atom_losses: Vec<S>,
    pub atom_coords: Vec<Vec<S>>,
    pub atom_classes: Vec<usize>,
    pub sample_indices: Vec<usize>,
}

impl<S: Scalar> WassersteinInstance<S> {
    /// All atoms in one class.
    pub fn single_class(atom_losses: Vec<S>, atom_coords: Vec<Vec<S>>, sample_indices: Vec<usize>) -> Self {
        let atom_classes = vec![0; atom_losses.len()];
        Self {
            atom_losses,
            atom_coords,
            atom_classes,
            sample_indices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.atom_losses.len();
        if m == 0 {
            return Err(domain("empty candidate support"));
        }
        if self.atom_coords.len() != m || self.atom_classes.len() != m {
            return Err(domain("atom losses, coordinates and classes differ in length"));
        }
        let dim = self.atom_coords[0].len();
        if self.atom_coords.iter().any(|c| c.len() != dim) {
            return Err(domain("atom coordinates have inconsistent dimensions"));
        }
        if self.sample_indices.is_empty() {
            return Err(domain("no sample atoms"));
        }
        for &i in &self.sample_indices {
            check_index("atom", i, m)?;
        }
        if self.atom_losses.iter().any(|l| !l.is_finite())
            || self.atom_coords.iter().flatten().any(|c| !c.is_finite())
        {
            return Err(Error::NonFinite {
                stage: "wasserstein instance".into(),
            });
        }
        Ok(())
    }

    pub fn squared_distance(&self, a: usize, b: usize) -> S {
        self.atom_coords[a]
            .iter()
            .zip(&self.atom_coords[b])
            .fold(S::zero(), |acc, (u, v)| acc + (*u - *v) * (*u - *v))
    }

    /// Largest distance between two atoms of the same class.
    pub fn diameter(&self) -> S {
        let m = self.atom_losses.len();
        let mut best = S::zero();
        for a in 0..m {
            for b in (a + 1)..m {
                if self.atom_classes[a] == self.atom_classes[b] {
                    best = best.max(self.squared_distance(a, b));
                }
            }
        }
        best.sqrt()
    }

    /// Mean loss at the sample atoms.
    pub fn nominal_value(&self) -> S {
        let n = S::from_usize(self.sample_indices.len()).unwrap();
        self.sample_indices
            .iter()
            .fold(S::zero(), |acc, &i| acc + self.atom_losses[i])
            / n
    }

    fn inv_n(&self) -> S {
        S::one() / S::from_usize(self.sample_indices.len()).unwrap()
    }

    /// Dual objective at a given multiplier.
    pub fn dual_objective(&self, rho: S, eta: S) -> S {
        let mut acc = S::zero();
        for &i in &self.sample_indices {
            let mut best = S::neg_infinity();
            for j in 0..self.atom_losses.len() {
                if self.atom_classes[j] == self.atom_classes[i] {
                    best = best.max(self.atom_losses[j] - eta * self.squared_distance(i, j));
                }
            }
            acc = acc + best;
        }
        eta * rho * rho + acc * self.inv_n()
    }

    /// Multiplier above which every inner maximizer is the sample atom itself,
    /// doubled; `1` when no two same-class atoms are separated.
    pub fn eta_max(&self) -> S {
        let (lo, hi) = self
            .atom_losses
            .iter()
            .fold((S::infinity(), S::neg_infinity()), |(lo, hi), l| (lo.min(*l), hi.max(*l)));
        let m = self.atom_losses.len();
        let mut min_d2 = S::infinity();
        for a in 0..m {
            for b in (a + 1)..m {
                let d2 = self.squared_distance(a, b);
                if self.atom_classes[a] == self.atom_classes[b] && d2 > S::zero() {
                    min_d2 = min_d2.min(d2);
                }
            }
        }
        if min_d2.is_finite() && hi > lo {
            S::of(2.0) * (hi - lo) / min_d2
        } else {
            S::one()
        }
    }
}

/// Dual optimum and the multiplier attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct WassersteinDual<S: Scalar> {
    pub value: S,
    pub eta: S,
    pub eta_max: S,
    pub iterations: usize,
}

/// Minimizes the dual over `η ∈ [0, η_max]`. The search width is scaled so the
/// value is accurate to `tol`.
pub fn wasserstein_dual_solve<S: Scalar>(inst: &WassersteinInstance<S>, rho: S, tol: S) -> Result<WassersteinDual<S>> {
    inst.validate()?;
    if !(rho >= S::zero()) || !rho.is_finite() {
        return Err(domain(format!("radius must be non-negative, got {rho}")));
    }
    if !(tol > S::zero()) {
        return Err(domain("tolerance must be positive"));
    }
    let eta_max = inst.eta_max();
    let diam = inst.diameter();
    let slope = rho * rho + diam * diam;
    let width = if slope > S::zero() { tol / slope } else { tol };
    let m = golden_section(|eta| inst.dual_objective(rho, eta), S::zero(), eta_max, width);
    Ok(WassersteinDual {
        value: m.value,
        eta: m.argmin,
        eta_max,
        iterations: m.iterations,
    })
}

/// Worst-case expected loss over the type-2 Wasserstein ball of radius `rho`
/// around the empirical distribution of `sample_indices`, with all atoms in one
/// label class.
pub fn wasserstein_dual_value<S: Scalar>(
    atom_losses: &[S],
    atom_coords: &[Vec<S>],
    sample_indices: &[usize],
    rho: S,
    tol: S,
) -> Result<S> {
    let inst = WassersteinInstance::single_class(atom_losses.to_vec(), atom_coords.to_vec(), sample_indices.to_vec());
    Ok(wasserstein_dual_solve(&inst, rho, tol)?.value)
}

/// Exact primal by enumerating basic feasible transport plans.
///
/// With one budget constraint, an optimal vertex sends each sample to a single
/// atom except for at most one sample split between two atoms. Cost grows as
/// `m^n`; meant for a handful of atoms and samples.
pub fn wasserstein_primal_oracle<S: Scalar>(inst: &WassersteinInstance<S>, rho: S) -> Result<S> {
    inst.validate()?;
    let n = inst.sample_indices.len();
    let m = inst.atom_losses.len();
    if n > 8 || m > 8 {
        return Err(domain("primal enumeration is limited to 8 samples and 8 atoms"));
    }
    let budget = rho * rho;
    let mass = inst.inv_n();
    let targets: Vec<Vec<usize>> = inst
        .sample_indices
        .iter()
        .map(|&i| (0..m).filter(|&j| inst.atom_classes[j] == inst.atom_classes[i]).collect())
        .collect();
    let cost = |k: usize, j: usize| inst.squared_distance(inst.sample_indices[k], j);

    let mut best = S::neg_infinity();
    let mut choice = vec![0usize; n];
    loop {
        let (mut c, mut v) = (S::zero(), S::zero());
        for k in 0..n {
            let j = targets[k][choice[k]];
            c = c + mass * cost(k, j);
            v = v + mass * inst.atom_losses[j];
        }
        let slack = S::of(1e-12) * (S::one() + budget);
        if c <= budget + slack {
            best = best.max(v);
        }
        // Split sample k between its assigned atom and one alternative.
        for k in 0..n {
            let j1 = targets[k][choice[k]];
            let (c_rest, v_rest) = (c - mass * cost(k, j1), v - mass * inst.atom_losses[j1]);
            for &j2 in &targets[k] {
                let (d1, d2) = (cost(k, j1), cost(k, j2));
                if d1 == d2 {
                    continue;
                }
                let f = (budget - c_rest - mass * d2) / (mass * (d1 - d2));
                if f >= S::zero() && f <= S::one() {
                    let val = v_rest + mass * (f * inst.atom_losses[j1] + (S::one() - f) * inst.atom_losses[j2]);
                    best = best.max(val);
                }
            }
        }
        // Next assignment in mixed radix.
        let mut k = 0;
        while k < n {
            choice[k] += 1;
            if choice[k] < targets[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    Ok(best)
}

/// Axis-aligned stencil added around every data atom: `x ± k·spacing·e_j`
/// for `k = 1..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportGrid {
    pub steps: usize,
    pub spacing: f64,
}

impl Default for SupportGrid {
    fn default() -> Self {
        Self { steps: 2, spacing: 0.25 }
    }
}

/// Candidate support for a design: its distinct `(x, y)` atoms plus the stencil
/// around each, with losses evaluated at the current policy.
pub fn design_support<S: Scalar>(
    design: &FeatureDesign<S>,
    pp: &PolicyPair<S>,
    grid: SupportGrid,
) -> Result<WassersteinInstance<S>> {
    design.check(pp)?;
    if !design.is_uniform() {
        return Err(domain("candidate supports need equally weighted samples"));
    }
    if !(grid.spacing > 0.0) && grid.steps > 0 {
        return Err(domain("support grid spacing must be positive"));
    }
    let delta = pp.delta();
    let mut atoms: Vec<(Vec<S>, usize)> = Vec::new();
    let mut sample_indices = Vec::with_capacity(design.len());
    let push = |atoms: &mut Vec<(Vec<S>, usize)>, x: Vec<S>, class: usize| -> usize {
        match atoms.iter().position(|(a, c)| *c == class && *a == x) {
            Some(p) => p,
            None => {
                atoms.push((x, class));
                atoms.len() - 1
            }
        }
    };
    for i in 0..design.len() {
        let class = usize::from(design.y(i) == S::one());
        let idx = push(&mut atoms, design.x(i).to_vec(), class);
        sample_indices.push(idx);
    }
    let data_atoms = atoms.len();
    for a in 0..data_atoms {
        let (x, class) = atoms[a].clone();
        for j in 0..x.len() {
            for k in 1..=grid.steps {
                let offset = S::of(grid.spacing * k as f64);
                for sign in [S::one(), -S::one()] {
                    let mut p = x.clone();
                    p[j] = p[j] + sign * offset;
                    push(&mut atoms, p, class);
                }
            }
        }
    }
    let (atom_coords, atom_classes): (Vec<Vec<S>>, Vec<usize>) = atoms.into_iter().unzip();
    let atom_losses = atom_coords
        .iter()
        .zip(&atom_classes)
        .map(|(x, c)| {
            let t = pp.beta * x.iter().zip(&delta).fold(S::zero(), |acc, (u, v)| acc + *u * *v);
            loss_from_scaled_score(t, if *c == 1 { S::one() } else { S::zero() })
        })
        .collect();
    Ok(WassersteinInstance {
        atom_losses,
        atom_coords,
        atom_classes,
        sample_indices,
    })
}
