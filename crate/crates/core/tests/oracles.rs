//! Worked examples checked against oracles built here from the defining formulas.

use drdpo::experiments::env::{EnvSpec, Environment};
use drdpo::experiments::rate::{rate_experiment, RateStudySpec};
use drdpo::experiments::shift::{shift_sweep, ShiftEnv, ShiftStudySpec};
use drdpo::fixtures::{random_instance, InstanceShape};
use drdpo::losses::{dpo_gradient_on, empirical_dpo_loss_on, input_gradient_norm, loss_constants};
use drdpo::policy::preference_score;
use drdpo::prefgen::{
    bt_preference_prob, expected_policy_reward, mixture_reward, realizable_reward, sample_dataset,
};
use drdpo::robust::{
    kl_dual_value, kl_worst_case_exact, kldpo_worst_kernel, wasserstein_dual_value, wdpo_pointwise_upper,
};
use drdpo::train::{smoothness_step, train_on, Method, TrainConfig};
use drdpo::{
    FeatureDesign, FeatureMap, MixtureMode, MixtureSpec, PolicyPair, PolicyParams, PreferenceSample, TabularReward,
};

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[test]
fn softplus_at_one() {
    let fm = FeatureMap::new(1, 2, 1, vec![0.5, -0.5]).unwrap();
    let pp = PolicyPair::with_uniform_reference(PolicyParams::new(vec![1.0], 1.0).unwrap(), 1.0).unwrap();
    let s = PreferenceSample::new(0, 0, 1, true).unwrap();
    let l = drdpo::losses::pointwise_dpo_loss(&pp, &fm, &s).unwrap();
    assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    assert!((l - 0.313262).abs() < 1e-6);
}

#[test]
fn gamma_reference_value() {
    let c = loss_constants(0.1, 1.0);
    let e = 0.4f64.exp();
    assert!((c.gamma - 0.01 * e / (1.0 + e).powi(2)).abs() < 1e-17);
    let flat = loss_constants(1.0, 0.0);
    assert_eq!(flat.gamma, 0.25);
    assert!((flat.k - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn input_gradient_closed_form() {
    // y = 1, beta*h = 0, ||theta - theta_ref|| = 1, beta = 2 -> 2 * 1/2 * 1
    let fm = FeatureMap::new(1, 2, 2, vec![0.0, 0.5, 0.0, -0.5]).unwrap();
    let pp = PolicyPair::with_uniform_reference(PolicyParams::new(vec![1.0, 0.0], 1.0).unwrap(), 2.0).unwrap();
    let s = PreferenceSample::new(0, 0, 1, true).unwrap();
    assert!((input_gradient_norm(&pp, &fm, &s).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn wdpo_pointwise_upper_composes() {
    let inst = random_instance(3, 0, InstanceShape::default()).unwrap();
    let beta = inst.pp.beta;
    let dn = drdpo::linalg::norm(&inst.pp.delta());
    for s in inst.ds.samples() {
        let h = preference_score(&inst.pp, &inst.fm, s).unwrap();
        let y = if s.label { 1.0 } else { 0.0 };
        let loss = -(y * sigmoid(beta * h).ln() + (1.0 - y) * sigmoid(-beta * h).ln());
        let g = beta * (y - sigmoid(beta * h)).abs() * dn;
        let upper = wdpo_pointwise_upper(&inst.pp, &inst.fm, s, 0.3).unwrap();
        assert!((upper - (loss + 0.3 * g * g)).abs() < 1e-12);
    }
}

#[test]
fn kernel_matches_softmax() {
    let w = kldpo_worst_kernel(&[1.0, 2.0, 3.0], &[1.0 / 3.0; 3], 1.0).unwrap();
    let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
    for (k, wk) in w.iter().enumerate() {
        assert!((wk - ((k + 1) as f64).exp() / z).abs() < 1e-15);
    }
    for (a, b) in w.iter().zip([0.090031, 0.244728, 0.665241]) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn kl_dual_matches_grid_search() {
    let (losses, q, rho) = ([0.0, 1.0, 2.0], [1.0 / 3.0; 3], 0.1);
    let grid_min = (0..2000)
        .map(|i| {
            let lam = 10f64.powf(-3.0 + 6.0 * i as f64 / 1999.0);
            let mgf: f64 = losses.iter().zip(&q).map(|(l, p)| p * (l / lam).exp()).sum();
            lam * rho + lam * mgf.ln()
        })
        .fold(f64::INFINITY, f64::min);
    let v = kl_dual_value(&losses, &q, rho, 1e-6, 1e6, 1e-10).unwrap();
    assert!(v <= grid_min + 1e-12);
    assert!((v - grid_min).abs() < 1e-5);
}

#[test]
fn two_atom_tilt_matches_binary_entropy_root() {
    // p0 log(2 p0) + (1 - p0) log(2 (1 - p0)) = 0.05 with p0 < 1/2
    let kl = |p: f64| p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln();
    let (mut lo, mut hi) = (1e-12, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // kl decreases on (0, 1/2)
        if kl(mid) > 0.05 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p0 = 0.5 * (lo + hi);
    let t = kl_worst_case_exact(&[0.0, 1.0], &[0.5, 0.5], 0.05, 1e-12).unwrap();
    assert!((t.weights[0] - p0).abs() < 1e-8, "{} vs {p0}", t.weights[0]);
}

#[test]
fn kl_primal_equals_dual_on_five_atoms() {
    let mut rng = drdpo::rng::substream(17, "tests/kl5");
    for _ in 0..20 {
        let losses = drdpo::fixtures::random_losses(&mut rng, 5, 3.0);
        let q = drdpo::fixtures::random_distribution(&mut rng, 5);
        let t = kl_worst_case_exact(&losses, &q, 0.2, 1e-10).unwrap();
        let primal: f64 = t.weights.iter().zip(&losses).map(|(p, l)| p * l).sum();
        let dual = kl_dual_value(&losses, &q, 0.2, 1e-6, 1e6, 1e-10).unwrap();
        assert!((primal - dual).abs() < 1e-5);
    }
}

#[test]
fn wasserstein_three_atoms_matches_plan_grid() {
    // One sample at atom 0; a plan is the split (p0, p1, p2) of its mass.
    let losses = [0.2, 0.9, 0.6];
    let coords = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.5]];
    let d2 = [0.0, 1.0, 0.25];
    let steps = 2000;
    for rho in [0.1, 0.3, 0.6, 0.9] {
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let (p1, p2) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let p0 = 1.0 - p1 - p2;
                if p1 * d2[1] + p2 * d2[2] <= rho * rho {
                    best = best.max(p0 * losses[0] + p1 * losses[1] + p2 * losses[2]);
                }
            }
        }
        let dual = wasserstein_dual_value(&losses, &coords, &[0], rho, 1e-9).unwrap();
        assert!((dual - best).abs() < 1e-3, "rho {rho}: dual {dual} grid {best}");
    }
}

#[test]
fn mixture_cell_values() {
    let r1 = TabularReward::new(1, 2, vec![2.0, 1.0]).unwrap();
    let r2 = TabularReward::new(1, 2, vec![4.0, 1.0]).unwrap();
    let convex = mixture_reward(&r1, &r2, MixtureSpec::new(MixtureMode::Convex, 0.5).unwrap()).unwrap();
    let geometric = mixture_reward(&r1, &r2, MixtureSpec::new(MixtureMode::Geometric, 0.5).unwrap()).unwrap();
    assert!((convex.get(0, 0).unwrap() - 3.0).abs() < 1e-15);
    assert!((geometric.get(0, 0).unwrap() - 8f64.sqrt()).abs() < 1e-15);
}

#[test]
fn realizable_reward_reproduces_scores() {
    let inst = random_instance(4, 2, InstanceShape::default()).unwrap();
    let r = realizable_reward(&inst.pp.current, &inst.pp.reference, inst.pp.beta, &inst.fm).unwrap();
    for s in inst.ds.samples() {
        let p = bt_preference_prob(&r, s.state, s.first, s.second).unwrap();
        let h = preference_score(&inst.pp, &inst.fm, s).unwrap();
        assert!((p - sigmoid(inst.pp.beta * h)).abs() < 1e-12);
    }
    let doubled = realizable_reward(&inst.pp.current, &inst.pp.reference, 2.0 * inst.pp.beta, &inst.fm).unwrap();
    for s in 0..inst.fm.num_states() {
        let (a, b) = (r.row(s).unwrap(), doubled.row(s).unwrap());
        assert!((2.0 * (a[0] - a[1]) - (b[0] - b[1])).abs() < 1e-12);
    }
}

#[test]
fn saturated_rewards_give_nearly_deterministic_labels() {
    // Action 0 beats action 1 by a reward gap of 50 in every state.
    let fm = FeatureMap::new(2, 2, 1, vec![0.0; 4]).unwrap();
    let r = TabularReward::new(2, 2, vec![50.0, 0.0, 50.0, 0.0]).unwrap();
    let spec = drdpo::SamplingSpec {
        prompt_dist: vec![0.5, 0.5],
        behavior: PolicyParams::zeros(1, 1.0).unwrap(),
        n: 10_000,
        seed: 5,
        alpha_o: None,
        reward_label: "gap50".into(),
    };
    let ds = sample_dataset(&fm, &spec, &r).unwrap();
    let agree = ds.samples().iter().filter(|s| s.label == (s.first == 0)).count();
    assert!(agree as f64 / ds.len() as f64 >= 0.999);

    let flat = TabularReward::constant(2, 2, 0.3).unwrap();
    let ds = sample_dataset(&fm, &drdpo::SamplingSpec { n: 100_000, ..spec }, &flat).unwrap();
    let ones = ds.samples().iter().filter(|s| s.label).count() as f64 / ds.len() as f64;
    assert!((ones - 0.5).abs() < 0.01);
}

#[test]
fn saturated_policy_reward_is_dominant_action_reward() {
    // Action 1 has feature +1 and the rest 0: theta = 50 gives a logit margin of 50.
    let fm = FeatureMap::new(2, 3, 1, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let p = PolicyParams::new(vec![50.0], 50.0).unwrap();
    let r = TabularReward::new(2, 3, vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.4]).unwrap();
    let v = expected_policy_reward(&p, &fm, &[0.25, 0.75], &r).unwrap();
    assert!((v - (0.25 * 0.7 + 0.75 * 0.2)).abs() < 1e-10);
}

/// Newton's method on the empirical loss, with gradient and Hessian from the closed forms.
fn newton_minimum(design: &FeatureDesign, pp: &PolicyPair) -> f64 {
    let d = design.dim();
    let mut theta = pp.current.theta.clone();
    for _ in 0..50 {
        let cur = pp.with_theta(theta.clone());
        let mut g = nalgebra::DVector::<f64>::zeros(d);
        let mut h = nalgebra::DMatrix::<f64>::zeros(d, d);
        for i in 0..design.len() {
            let x = nalgebra::DVector::from_column_slice(design.x(i));
            let delta = nalgebra::DVector::from_vec(cur.delta());
            let s = sigmoid(pp.beta * delta.dot(&x));
            let w = design.weight(i);
            g += &x * (w * pp.beta * (s - design.y(i)));
            h += &x * x.transpose() * (w * pp.beta * pp.beta * s * (1.0 - s));
        }
        let step = h.lu().solve(&g).unwrap();
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t -= s;
        }
    }
    empirical_dpo_loss_on(design, &pp.with_theta(theta)).unwrap()
}

#[test]
fn long_run_dpo_reaches_the_minimum() {
    let env = Environment::generate(&EnvSpec::new(10, 6, 4, 12)).unwrap();
    let theta_true = env.random_parameter(12, 1.0, 3.0).unwrap();
    let reference = PolicyParams::zeros(4, 3.0).unwrap();
    let r = realizable_reward(&theta_true, &reference, 1.0, &env.fm).unwrap();
    let ds = sample_dataset(&env.fm, &env.sampling_spec(10_000, 8, None, "realizable"), &r).unwrap();
    let design = FeatureDesign::new(&env.fm, &ds).unwrap().compress();
    let pp = PolicyPair::new(reference.clone(), reference, 1.0).unwrap();
    let lr = smoothness_step(&design, 1.0).unwrap();
    let cfg = TrainConfig::new(Method::Dpo, lr, 2000, 1.0, 3.0);
    let report = train_on(&cfg, &pp, &design).unwrap();
    let fitted = pp.with_theta(report.final_params.theta.clone());
    assert!(drdpo::linalg::norm(&dpo_gradient_on(&design, &fitted).unwrap()) <= 1e-6);
    assert!(report.final_params.norm() < 3.0, "minimizer should be interior");
    let best = newton_minimum(&design, &pp);
    let reached = empirical_dpo_loss_on(&design, &fitted).unwrap();
    assert!((reached - best).abs() <= 1e-6, "{reached} vs {best}");
}

fn small_shift_spec(identical: bool) -> ShiftStudySpec {
    let env_spec = EnvSpec::new(6, 4, 4, 2);
    let environment = Environment::generate(&env_spec).unwrap();
    let (r1, r2) = environment.competing_rewards(&env_spec).unwrap();
    let r2 = if identical { r1.clone() } else { r2 };
    let mut w = TrainConfig::new(Method::Wdpo, 1.0, 200, 1.0, 3.0);
    w.robust.rho_o = 0.1;
    ShiftStudySpec {
        alpha_train: 0.1,
        alpha_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
        mode: MixtureMode::Convex,
        methods: vec![TrainConfig::new(Method::Dpo, 1.0, 200, 1.0, 3.0), w],
        seeds: vec![1, 2, 3],
        env: ShiftEnv {
            environment,
            r1,
            r2,
            n: 400,
        },
    }
}

#[test]
fn shift_sweep_examples() {
    let spec = small_shift_spec(false);
    let a = shift_sweep(&spec).unwrap();
    let b = shift_sweep(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());
    // Trained on alpha = 0.1: the best cell lies within the two cells nearest it.
    for m in ["dpo", "wdpo(rho_o=0.1)"] {
        let mut medians: Vec<(f64, f64)> = spec
            .alpha_grid
            .iter()
            .map(|alpha| (a.median_at(m, *alpha).unwrap(), *alpha))
            .collect();
        medians.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let top_two: Vec<f64> = medians[..2].iter().map(|(_, alpha)| *alpha).collect();
        assert!(top_two.iter().any(|alpha| (alpha - 0.1).abs() < 0.15), "{m}: {top_two:?}");
    }

    let flat = shift_sweep(&small_shift_spec(true)).unwrap();
    for c in &flat.cells {
        let first = flat.cells.iter().find(|d| d.method == c.method && d.seed == c.seed).unwrap();
        assert!((c.reward.unwrap() - first.reward.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn single_size_rate_study_has_no_slope() {
    let env = Environment::generate(&EnvSpec::new(5, 4, 3, 1)).unwrap();
    let theta_true = env.random_parameter(1, 1.0, 2.0).unwrap();
    let spec = RateStudySpec {
        n_grid: vec![200],
        repetitions: 3,
        theta_true,
        env,
        reference_n: 800,
        methods: vec![TrainConfig::new(Method::Dpo, 1.0, 300, 1.0, 2.0)],
        seed: 1,
        lambda: 1e-3,
        lr_from_smoothness: true,
        lr_scale: 0.5,
    };
    let report = rate_experiment(&spec).unwrap();
    let fit = report.fit("dpo").unwrap();
    assert!(fit.slope.is_none());
    assert!(fit.first_median.is_some());
}
