//! The `verify` suite: oracle and invariant checks over seeded random
//! instances, one per registered invariant of the loss, robust and training
//! layers.

use drdpo::fixtures::{random_distribution, random_instance, random_losses, Instance, InstanceShape};
use drdpo::linalg::{min_eigenvalue, norm, sub};
use drdpo::losses::{
    dpo_gradient_on, dpo_hessian_on, empirical_dpo_loss_on, input_gradient_norm, loss_constants,
    loss_from_scaled_score, pointwise_dpo_loss, pointwise_losses_on,
};
use drdpo::rng::substream;
use drdpo::robust::{
    kl_divergence, kl_dual_value, kl_tilt_at_temperature, kl_worst_case_exact, kldpo_weights_on,
    kldpo_worst_kernel, wasserstein_dual_solve, wasserstein_primal_oracle, wdpo_loss_approx_on,
    wdpo_pointwise_upper, Saturation,
};
use drdpo::train::{
    finite_difference_gradient, objective_on, robust_gradient_on, smoothness_step, train_on, Batch, Method,
    TrainConfig,
};
use drdpo::{PolicyPair, PolicyParams, Result, WassersteinInstance};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Relative tolerance for finite-difference gradient comparisons.
pub const FD_RELATIVE_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: String,
    pub module: String,
    pub invariant: String,
    pub passed: bool,
    pub instances: usize,
    /// Largest violation measure seen (check-specific; see `invariant`).
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
    /// Registered invariants that have no executed check.
    pub unexecuted: Vec<String>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count() + self.unexecuted.len()
    }
}

struct Outcome {
    passed: bool,
    instances: usize,
    worst: f64,
    detail: String,
}

impl Outcome {
    fn bound(instances: usize, worst: f64, limit: f64, what: &str) -> Self {
        Self {
            passed: worst <= limit,
            instances,
            worst,
            detail: format!("max {what} = {worst:e} (limit {limit:e})"),
        }
    }
}

type CheckFn = fn(u64, usize) -> Result<Outcome>;

/// `(module, id, invariant, check)`.
const REGISTRY: &[(&str, &str, &str, CheckFn)] = &[
    ("losses", "losses.loss_bounds", "0 < pointwise loss <= K for in-bound parameters", loss_bounds),
    ("losses", "losses.gradient_fd", "dpo_gradient matches central differences (relative error <= 1e-5)", gradient_fd),
    ("losses", "losses.hessian_fd", "dpo_hessian matches differences of dpo_gradient (1e-4)", hessian_fd),
    ("losses", "losses.strong_convexity", "Hessian is PSD and dominates gamma * Sigma_D", strong_convexity),
    ("losses", "losses.hessian_reference_invariance", "Hessian depends on (theta, theta_ref) only through the difference", hessian_reference_invariance),
    ("losses", "losses.input_gradient_fd", "input_gradient_norm matches differences in x (1e-6)", input_gradient_fd),
    ("losses", "losses.input_gradient_label_order", "input gradient norm is largest at the disfavored label", input_gradient_label_order),
    ("losses", "losses.constants_consistent", "gamma, K, L equal their formulas in (beta, B)", constants_consistent),
    ("robust", "robust.wdpo_zero_radius", "wdpo_loss_approx(rho_o = 0) equals empirical_dpo_loss bitwise", wdpo_zero_radius),
    ("robust", "robust.wdpo_pointwise_upper", "pointwise upper bound dominates the loss and, where mean squared norm >= 1, the RMS surrogate", wdpo_pointwise_upper_check),
    ("robust", "robust.kernel_likelihood_ratio", "kernel preserves the loss order among equal-base atoms and sums to 1", kernel_likelihood_ratio),
    ("robust", "robust.kl_dual_monotone", "kl_dual_value is nondecreasing in rho and at least the base mean", kl_dual_monotone),
    ("robust", "robust.kl_exact_primal_dual", "exact tilt: KL within tol of rho, primal = dual within 10 tol, -mu - lambda <= -E_q[l]", kl_exact_primal_dual),
    ("robust", "robust.wasserstein_dual", "Wasserstein dual >= mean, nondecreasing in rho, equal to the enumerated primal", wasserstein_dual_check),
    ("robust", "robust.kernel_tilt_consistency", "Alg. 2 kernel equals the exact tilt at lambda = tau", kernel_tilt_consistency),
    ("train", "train.robust_gradient_fd", "robust_gradient matches central differences for dpo, wdpo and frozen-weight kldpo", robust_gradient_fd),
    ("train", "train.projection", "every iterate satisfies ||theta|| <= B", projection),
    ("train", "train.descent", "full-batch DPO with the smoothness step never increases the loss", descent),
    ("train", "train.method_reductions", "wdpo(0) equals dpo bitwise; kldpo(1e6) loss trace within 1e-6 of dpo over 100 epochs (beta*B <= 2)", method_reductions),
    ("train", "train.determinism", "identical config, data and init give identical reports", determinism),
];

/// Registered invariant ids, in execution order.
pub fn registered_invariants() -> Vec<&'static str> {
    REGISTRY.iter().map(|(_, id, _, _)| *id).collect()
}

/// Runs every registered check.
pub fn run_suite(seed: u64, instances: usize) -> VerifyReport {
    run_checks(seed, instances, &registered_invariants())
}

/// Runs the named checks; registered ids not in `ids` are reported as unexecuted.
pub fn run_checks(seed: u64, instances: usize, ids: &[&str]) -> VerifyReport {
    let mut checks = Vec::new();
    for (module, id, invariant, f) in REGISTRY {
        if !ids.contains(id) {
            continue;
        }
        log::info!("running {id}");
        let outcome = f(seed, instances.max(1)).unwrap_or_else(|e| Outcome {
            passed: false,
            instances: 0,
            worst: f64::INFINITY,
            detail: format!("error: {e}"),
        });
        checks.push(CheckResult {
            id: id.to_string(),
            module: module.to_string(),
            invariant: invariant.to_string(),
            passed: outcome.passed,
            instances: outcome.instances,
            worst: outcome.worst,
            detail: outcome.detail,
        });
    }
    let unexecuted: Vec<String> = REGISTRY
        .iter()
        .map(|(_, id, _, _)| id.to_string())
        .filter(|id| !checks.iter().any(|c| c.id == *id))
        .collect();
    let passed = unexecuted.is_empty() && checks.iter().all(|c| c.passed);
    VerifyReport {
        seed,
        instances,
        checks,
        unexecuted,
        passed,
    }
}

fn instance(seed: u64, i: usize) -> Result<Instance> {
    random_instance(seed, i, InstanceShape::default())
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(norm(a)).max(1e-6)
}

fn loss_bounds(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut positive = true;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let k = loss_constants(inst.pp.beta, inst.pp.current.bound).k;
        for l in pointwise_losses_on(&inst.design(), &inst.pp)? {
            positive &= l > 0.0;
            worst = worst.max(l - k);
        }
    }
    let mut o = Outcome::bound(count, worst, 0.0, "loss - K");
    o.passed &= positive;
    Ok(o)
}

fn gradient_fd(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        let g = dpo_gradient_on(&design, &inst.pp)?;
        let fd = finite_difference_gradient(
            |t| empirical_dpo_loss_on(&design, &inst.pp.with_theta(t.to_vec())).unwrap(),
            &inst.pp.current.theta,
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(Outcome::bound(count, worst, FD_RELATIVE_TOL, "relative error"))
}

fn hessian_fd(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        let h = dpo_hessian_on(&design, &inst.pp)?;
        let d = design.dim();
        for k in 0..d {
            let column = finite_difference_gradient(
                |t| {
                    let g = dpo_gradient_on(&design, &inst.pp.with_theta(t.to_vec())).unwrap();
                    g[k]
                },
                &inst.pp.current.theta,
                FD_STEP,
            );
            for (j, v) in column.iter().enumerate() {
                worst = worst.max((h[(k, j)] - v).abs());
            }
        }
    }
    Ok(Outcome::bound(count, worst, 1e-4, "entry error"))
}

fn strong_convexity(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        let gamma = loss_constants(inst.pp.beta, inst.pp.current.bound).gamma;
        let h = dpo_hessian_on(&design, &inst.pp)?;
        let gap = h.sub(&design.covariance().scaled(gamma));
        worst = worst.max(-min_eigenvalue(&gap)?);
        worst = worst.max(-min_eigenvalue(&h)?);
    }
    Ok(Outcome::bound(count, worst, 1e-10, "negative eigenvalue"))
}

fn hessian_reference_invariance(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        let mut rng = substream(seed, &format!("verify/shift/{i}"));
        let c: Vec<f64> = (0..design.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift = |p: &PolicyParams| PolicyParams {
            theta: p.theta.iter().zip(&c).map(|(a, b)| a + b).collect(),
            bound: p.bound + norm(&c),
        };
        let moved = PolicyPair::new(shift(&inst.pp.current), shift(&inst.pp.reference), inst.pp.beta)?;
        let a = dpo_hessian_on(&design, &inst.pp)?;
        let b = dpo_hessian_on(&design, &moved)?;
        let diff = a.sub(&b);
        worst = worst.max(diff.as_slice().iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(Outcome::bound(count, worst, 1e-12, "entry difference"))
}

fn input_gradient_fd(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let delta = inst.pp.delta();
        for sample in inst.ds.samples().iter().take(4) {
            let x = inst.fm.difference(sample.state, sample.first, sample.second)?;
            let y = sample.y::<f64>();
            let fd = finite_difference_gradient(
                |z| loss_from_scaled_score(inst.pp.beta * drdpo::linalg::dot(&delta, z), y),
                &x,
                FD_STEP,
            );
            let closed = input_gradient_norm(&inst.pp, &inst.fm, sample)?;
            worst = worst.max((closed - norm(&fd)).abs());
            n += 1;
        }
    }
    Ok(Outcome::bound(n, worst, 1e-6, "absolute error"))
}

fn input_gradient_label_order(seed: u64, count: usize) -> Result<Outcome> {
    let mut violations = 0;
    let mut n = 0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        for sample in inst.ds.samples().iter().take(4) {
            let h = drdpo::policy::preference_score(&inst.pp, &inst.fm, sample)?;
            let mut pos = *sample;
            pos.label = true;
            let mut neg = *sample;
            neg.label = false;
            let (gp, gn) = (
                input_gradient_norm(&inst.pp, &inst.fm, &pos)?,
                input_gradient_norm(&inst.pp, &inst.fm, &neg)?,
            );
            // h > 0 favors a1, so y = 0 is the disfavored label.
            let ok = if h > 0.0 { gn >= gp } else if h < 0.0 { gp >= gn } else { gp == gn };
            violations += usize::from(!ok);
            n += 1;
        }
    }
    Ok(Outcome::bound(n, violations as f64, 0.0, "violations"))
}

fn constants_consistent(seed: u64, count: usize) -> Result<Outcome> {
    let mut rng = substream(seed, "verify/constants");
    let mut bad = 0;
    for _ in 0..count {
        let c = loss_constants(rng.gen_range(0.01..3.0), rng.gen_range(0.0..3.0));
        bad += usize::from(!c.is_consistent(1e-14));
    }
    Ok(Outcome::bound(count, bad as f64, 0.0, "inconsistent constants"))
}

fn wdpo_zero_radius(seed: u64, count: usize) -> Result<Outcome> {
    let mut bad = 0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let d = inst.design();
        let a = wdpo_loss_approx_on(&d, &inst.pp, 0.0)?;
        let b = empirical_dpo_loss_on(&d, &inst.pp)?;
        bad += usize::from(a.to_bits() != b.to_bits());
    }
    Ok(Outcome::bound(count, bad as f64, 0.0, "bitwise mismatches"))
}

fn wdpo_pointwise_upper_check(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut applicable = 0;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let d = inst.design();
        let rho_o = 0.5;
        let mut total = 0.0;
        let mut mean_sq = 0.0;
        for s in inst.ds.samples() {
            let upper = wdpo_pointwise_upper(&inst.pp, &inst.fm, s, rho_o)?;
            worst = worst.max(pointwise_dpo_loss(&inst.pp, &inst.fm, s)? - upper);
            total += upper;
            mean_sq += input_gradient_norm(&inst.pp, &inst.fm, s)?.powi(2);
        }
        let n = inst.ds.len() as f64;
        if mean_sq / n >= 1.0 {
            applicable += 1;
            worst = worst.max(wdpo_loss_approx_on(&d, &inst.pp, rho_o)? - total / n - 1e-12);
        }
    }
    let mut o = Outcome::bound(count, worst, 1e-15, "violation");
    o.detail.push_str(&format!("; RMS comparison applicable on {applicable} instances"));
    Ok(o)
}

fn kernel_likelihood_ratio(seed: u64, count: usize) -> Result<Outcome> {
    let mut rng = substream(seed, "verify/kernel");
    let mut bad = 0;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..count {
        let m = rng.gen_range(2..=10);
        let losses = random_losses(&mut rng, m, 3.0);
        let base = vec![1.0 / m as f64; m];
        let tau = rng.gen_range(0.05..5.0);
        let w = kldpo_worst_kernel(&losses, &base, tau)?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        for a in 0..m {
            for b in 0..m {
                if losses[a] > losses[b] && w[a] <= w[b] {
                    bad += 1;
                }
            }
        }
    }
    let mut o = Outcome::bound(count, worst_sum, 1e-12, "|sum - 1|");
    o.passed &= bad == 0;
    o.detail.push_str(&format!("; order violations {bad}"));
    Ok(o)
}

fn kl_dual_monotone(seed: u64, count: usize) -> Result<Outcome> {
    let mut rng = substream(seed, "verify/kl_dual");
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let m = rng.gen_range(2..=10);
        let losses = random_losses(&mut rng, m, 2.0);
        let q = random_distribution(&mut rng, m);
        let mean: f64 = losses.iter().zip(&q).map(|(l, p)| l * p).sum();
        let mut prev = f64::NEG_INFINITY;
        for rho in [0.0, 0.01, 0.05, 0.2, 0.5, 1.0] {
            let v = kl_dual_value(&losses, &q, rho, 1e-6, 1e6, 1e-10)?;
            worst = worst.max(prev - v).max(mean - v);
            prev = v;
        }
    }
    Ok(Outcome::bound(count, worst, 1e-9, "decrease or shortfall below the mean"))
}

fn kl_exact_primal_dual(seed: u64, count: usize) -> Result<Outcome> {
    let tol = 1e-9;
    let mut rng = substream(seed, "verify/kl_exact");
    let (mut kl_gap, mut dual_gap, mut bound_gap): (f64, f64, f64) = (0.0, 0.0, f64::NEG_INFINITY);
    let mut saturated = 0;
    for _ in 0..count {
        let m = rng.gen_range(2..=10);
        let losses = random_losses(&mut rng, m, 2.0);
        let q = random_distribution(&mut rng, m);
        let rho = rng.gen_range(0.01..1.0);
        let t = kl_worst_case_exact(&losses, &q, rho, tol)?;
        let primal = t.primal_value(&losses);
        let dual = kl_dual_value(&losses, &q, rho, 1e-6, 1e6, 1e-10)?;
        let mean: f64 = losses.iter().zip(&q).map(|(l, p)| l * p).sum();
        dual_gap = dual_gap.max((primal - dual).abs());
        bound_gap = bound_gap.max(t.dual_offset() + mean);
        if t.saturation == Saturation::PointMass {
            saturated += 1;
        } else {
            kl_gap = kl_gap.max((t.achieved_kl - rho).abs());
            kl_gap = kl_gap.max((kl_divergence(&t.weights, &q) - t.achieved_kl).abs() - 1e-10);
        }
    }
    let passed = kl_gap <= tol && dual_gap <= 1e-5 && bound_gap <= 1e-10;
    Ok(Outcome {
        passed,
        instances: count,
        worst: kl_gap.max(dual_gap),
        detail: format!(
            "max |KL - rho| = {kl_gap:e}, max |primal - dual| = {dual_gap:e}, max (-mu-lambda) + E_q[l] = {bound_gap:e}, point-mass saturations {saturated}"
        ),
    })
}

/// Small Wasserstein instance: up to 4 atoms in the plane.
pub fn random_wasserstein_instance(seed: u64, i: usize) -> WassersteinInstance {
    let mut rng = substream(seed, &format!("verify/wasserstein/{i}"));
    let m = rng.gen_range(2..=4);
    let losses = random_losses(&mut rng, m, 1.0);
    let coords = (0..m)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let n = rng.gen_range(1..=3);
    let samples = (0..n).map(|_| rng.gen_range(0..m)).collect();
    WassersteinInstance::single_class(losses, coords, samples)
}

fn wasserstein_dual_check(seed: u64, count: usize) -> Result<Outcome> {
    let tol = 1e-8;
    let (mut oracle_gap, mut monotone_gap, mut boundary_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..count {
        let inst = random_wasserstein_instance(seed, i);
        let diam = inst.diameter();
        let mut prev = f64::NEG_INFINITY;
        for frac in [0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5] {
            let rho = frac * diam;
            let dual = wasserstein_dual_solve(&inst, rho, tol)?.value;
            let primal = wasserstein_primal_oracle(&inst, rho)?;
            oracle_gap = oracle_gap.max((dual - primal).abs());
            monotone_gap = monotone_gap.max(prev - dual).max(inst.nominal_value() - dual);
            prev = dual;
            if frac == 0.0 {
                boundary_gap = boundary_gap.max((dual - inst.nominal_value()).abs());
            }
            if frac >= 1.0 {
                let max = inst.atom_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                boundary_gap = boundary_gap.max((dual - max).abs());
            }
        }
    }
    let passed = oracle_gap <= 1e-6 && monotone_gap <= tol && boundary_gap <= tol;
    Ok(Outcome {
        passed,
        instances: count,
        worst: oracle_gap,
        detail: format!(
            "max |dual - primal| = {oracle_gap:e}, max monotonicity violation = {monotone_gap:e}, max boundary error = {boundary_gap:e}"
        ),
    })
}

fn kernel_tilt_consistency(seed: u64, count: usize) -> Result<Outcome> {
    let mut rng = substream(seed, "verify/consistency");
    let (mut kernel_gap, mut solve_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..count {
        let m = rng.gen_range(2..=8);
        let losses = random_losses(&mut rng, m, 2.0);
        let q = random_distribution(&mut rng, m);
        let tau = rng.gen_range(0.2..5.0);
        let w = kldpo_worst_kernel(&losses, &q, tau)?;
        let tilt = kl_tilt_at_temperature(&losses, &q, tau)?;
        kernel_gap = kernel_gap.max(norm(&sub(&w, &tilt.weights)));
        // The radius implied by tau recovers the same distribution.
        if tilt.achieved_kl > 1e-6 {
            let solved = kl_worst_case_exact(&losses, &q, tilt.achieved_kl, 1e-12)?;
            solve_gap = solve_gap.max(norm(&sub(&w, &solved.weights)));
        }
    }
    let passed = kernel_gap <= 1e-8 && solve_gap <= 1e-6;
    Ok(Outcome {
        passed,
        instances: count,
        worst: kernel_gap,
        detail: format!("max ||kernel - tilt(tau)|| = {kernel_gap:e}, max ||kernel - exact(rho(tau))|| = {solve_gap:e}"),
    })
}

fn method_configs(beta: f64, bound: f64, rng: &mut drdpo::rng::StreamRng) -> Vec<TrainConfig> {
    let mut w = TrainConfig::new(Method::Wdpo, 0.1, 1, beta, bound);
    w.robust.rho_o = rng.gen_range(0.01..1.0);
    let mut k = TrainConfig::new(Method::Kldpo, 0.1, 1, beta, bound);
    k.robust.tau = rng.gen_range(0.2..5.0);
    vec![TrainConfig::new(Method::Dpo, 0.1, 1, beta, bound), w, k]
}

/// Objective whose gradient `robust_gradient` returns: kernel weights are
/// frozen at `theta0` for KLDPO.
pub fn frozen_objective(cfg: &TrainConfig, design: &drdpo::FeatureDesign, pp0: &PolicyPair) -> Result<impl Fn(&[f64]) -> f64> {
    let weights = match cfg.method {
        Method::Kldpo => Some(kldpo_weights_on(design, pp0, cfg.robust.tau)?),
        _ => None,
    };
    let (cfg, design, pp0) = (cfg.clone(), design.clone(), pp0.clone());
    Ok(move |t: &[f64]| {
        let pp = pp0.with_theta(t.to_vec());
        match &weights {
            Some(w) => {
                let losses = pointwise_losses_on(&design, &pp).unwrap();
                w.iter().zip(&losses).map(|(a, b)| a * b).sum()
            }
            None => objective_on(&cfg, &design, &pp).unwrap(),
        }
    })
}

fn robust_gradient_fd(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut rng = substream(seed, "verify/robust_fd");
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        for cfg in method_configs(inst.pp.beta, inst.pp.current.bound, &mut rng) {
            let g = robust_gradient_on(&cfg, &design, &inst.pp)?;
            let f = frozen_objective(&cfg, &design, &inst.pp)?;
            let fd = finite_difference_gradient(f, &inst.pp.current.theta, FD_STEP);
            worst = worst.max(relative_error(&g, &fd));
        }
    }
    Ok(Outcome::bound(count * 3, worst, FD_RELATIVE_TOL, "relative error"))
}

fn projection(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut rng = substream(seed, "verify/projection");
    for i in 0..count.min(40) {
        let inst = instance(seed, i)?;
        let design = inst.design();
        for mut cfg in method_configs(inst.pp.beta, inst.pp.current.bound, &mut rng) {
            cfg.lr = 50.0;
            cfg.stop_tol = 0.0;
            if i % 2 == 1 {
                cfg.batch = Batch::Size(3);
            }
            for epochs in 1..=6 {
                cfg.epochs = epochs;
                let r = train_on(&cfg, &inst.pp, &design)?;
                worst = worst.max(r.final_params.norm() - r.final_params.bound * (1.0 + 1e-12));
            }
        }
    }
    Ok(Outcome::bound(count.min(40) * 3, worst, 0.0, "||theta|| - B"))
}

fn descent(seed: u64, count: usize) -> Result<Outcome> {
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..count {
        let inst = instance(seed, i)?;
        let design = inst.design();
        let lr = match smoothness_step(&design, inst.pp.beta) {
            Ok(lr) => lr,
            Err(_) => continue,
        };
        let mut cfg = TrainConfig::new(Method::Dpo, lr, 50, inst.pp.beta, inst.pp.current.bound);
        cfg.stop_tol = 0.0;
        let r = train_on(&cfg, &inst.pp, &design)?;
        for w in r.loss_trace.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    Ok(Outcome::bound(count, worst, 1e-12, "loss increase"))
}

fn method_reductions(seed: u64, count: usize) -> Result<Outcome> {
    let mut bitwise_bad = 0;
    let mut worst: f64 = 0.0;
    let target = count.min(30);
    let mut used = 0;
    for i in 0..target * 20 {
        if used == target {
            break;
        }
        let inst = instance(seed, i)?;
        // The tau = 1e6 kernel deviates from uniform by O(K/tau); keep K moderate.
        if inst.pp.beta * inst.pp.current.bound > 2.0 {
            continue;
        }
        used += 1;
        let design = inst.design();
        let lr = smoothness_step(&design, inst.pp.beta).unwrap_or(0.1) * 0.5;
        let mut dpo = TrainConfig::new(Method::Dpo, lr, 100, inst.pp.beta, inst.pp.current.bound);
        dpo.stop_tol = 0.0;
        let mut wdpo = dpo.clone();
        wdpo.method = Method::Wdpo;
        wdpo.robust.rho_o = 0.0;
        let mut kldpo = dpo.clone();
        kldpo.method = Method::Kldpo;
        kldpo.robust.tau = 1e6;
        let a = train_on(&dpo, &inst.pp, &design)?;
        let b = train_on(&wdpo, &inst.pp, &design)?;
        let c = train_on(&kldpo, &inst.pp, &design)?;
        bitwise_bad += usize::from(a.loss_trace != b.loss_trace || a.final_params != b.final_params);
        for (x, y) in a.loss_trace.iter().zip(&c.loss_trace) {
            worst = worst.max((x - y).abs());
        }
    }
    let mut o = Outcome::bound(used, worst, 1e-6, "kldpo(1e6) loss-trace deviation from dpo");
    o.passed &= used == target;
    o.passed &= bitwise_bad == 0;
    o.detail.push_str(&format!("; wdpo(0) bitwise mismatches {bitwise_bad}"));
    Ok(o)
}

fn determinism(seed: u64, count: usize) -> Result<Outcome> {
    let mut bad = 0;
    let mut rng = substream(seed, "verify/determinism");
    for i in 0..count.min(20) {
        let inst = instance(seed, i)?;
        let design = inst.design();
        for mut cfg in method_configs(inst.pp.beta, inst.pp.current.bound, &mut rng) {
            cfg.epochs = 20;
            cfg.batch = Batch::Size(4);
            cfg.seed = i as u64;
            let a = train_on(&cfg, &inst.pp, &design)?.to_json()?;
            let b = train_on(&cfg, &inst.pp, &design)?.to_json()?;
            bad += usize::from(a != b);
        }
    }
    Ok(Outcome::bound(count.min(20) * 3, bad as f64, 0.0, "mismatched reports"))
}
