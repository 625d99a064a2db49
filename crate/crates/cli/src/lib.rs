//! Command-line front end: config loading, command execution and artifact
//! writing for the `drdpo` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::path::{Path, PathBuf};

use drdpo::experiments::distributed::{distributed_kernel_sim, SyncMode};
use drdpo::experiments::env::Environment;
use drdpo::experiments::rate::{rate_experiment, RateStudySpec};
use drdpo::experiments::shift::{shift_sweep, ShiftEnv, ShiftStudySpec};
use drdpo::prefgen::{mixture_reward, realizable_reward, sample_dataset, MixtureSpec};
use drdpo::rng::derive_seed;
use drdpo::train::train;
use drdpo::{FeatureMap, PolicyPair, PolicyParams, PreferenceDataset};
use serde::Serialize;

use crate::config::{
    load, DistCommandConfig, GenDataConfig, RateCommandConfig, RewardConfig, ShiftCommandConfig,
    TrainCommandConfig, VerifyConfig,
};
pub use crate::error::{CliError, CliResult};
use crate::error::Stage;
use crate::output::write_versioned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    Train,
    EvalShift,
    RateExp,
    DistSim,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::EvalShift => "eval-shift",
            Command::RateExp => "rate-exp",
            Command::DistSim => "dist-sim",
            Command::Verify => "verify",
        }
    }
}

/// One invocation: which command, which config, where artifacts go.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
}

/// Record written next to the artifacts of every successful run.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'static str,
    config_path: &'a Path,
    artifacts: Vec<PathBuf>,
}

struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Artifacts<'a> {
    fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = write_versioned(self.dir, name, contents).stage("writing artifacts")?;
        log::info!("wrote {}", path.display());
        self.written.push(path.clone());
        Ok(path)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).stage("serializing output")?;
        self.write(name, &text)
    }
}

/// Runs a command and returns the paths of the artifacts it wrote.
pub fn execute(run: &RunManifest) -> CliResult<Vec<PathBuf>> {
    let mut out = Artifacts {
        dir: &run.out_dir,
        written: Vec::new(),
    };
    let path = run.config_path.as_path();
    match run.command {
        Command::GenData => gen_data(&load(path)?, &mut out)?,
        Command::Train => train_command(&load(path)?, path, &mut out)?,
        Command::EvalShift => eval_shift(&load(path)?, &mut out)?,
        Command::RateExp => rate_exp(&load(path)?, &mut out)?,
        Command::DistSim => dist_sim(&load(path)?, &mut out)?,
        Command::Verify => verify_command(&load(path)?, &mut out)?,
    }
    let record = RunRecord {
        command: run.command.name(),
        config_path: path,
        artifacts: out.written.clone(),
    };
    out.json("manifest.json", &record)?;
    Ok(out.written)
}

fn gen_data(cfg: &GenDataConfig, out: &mut Artifacts) -> CliResult<()> {
    let env = Environment::generate(&cfg.env).stage("generating environment")?;
    let (reward, alpha_o, label) = match &cfg.reward {
        RewardConfig::Realizable { theta_radius, beta } => {
            let theta = env
                .random_parameter(derive_seed(cfg.seed, "gen-data/theta"), *theta_radius, *theta_radius)
                .stage("drawing ground-truth parameter")?;
            out.json("theta_true.json", &theta)?;
            let reference = PolicyParams::zeros(env.fm.dim(), *theta_radius).stage("building reference")?;
            let r = realizable_reward(&theta, &reference, *beta, &env.fm).stage("building reward")?;
            (r, None, "realizable".to_string())
        }
        RewardConfig::Mixture { mode, alpha } => {
            let spec = MixtureSpec::new(*mode, *alpha).stage("building mixture")?;
            let (r1, r2) = env.competing_rewards(&cfg.env).stage("building rewards")?;
            let r = mixture_reward(&r1, &r2, spec).stage("mixing rewards")?;
            let name = serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from));
            (r, Some(*alpha), format!("{}(r1,r2)", name.unwrap_or_default()))
        }
    };
    let spec = env.sampling_spec(cfg.n, derive_seed(cfg.seed, "gen-data/sample"), alpha_o, &label);
    let ds = sample_dataset(&env.fm, &spec, &reward).stage("sampling dataset")?;
    out.write("dataset.txt", &ds.to_text().stage("serializing dataset")?)?;
    out.write("features.json", &env.fm.to_json().stage("serializing features")?)?;
    out.json("reward.json", &reward)?;
    Ok(())
}

fn read_relative(config_path: &Path, file: &Path) -> CliResult<String> {
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let path = base.join(file);
    std::fs::read_to_string(&path).map_err(|e| CliError::runtime(format!("reading {}", path.display()), e))
}

fn train_command(cfg: &TrainCommandConfig, config_path: &Path, out: &mut Artifacts) -> CliResult<()> {
    let fm = FeatureMap::from_json(&read_relative(config_path, &cfg.features)?).stage("parsing features")?;
    let ds = PreferenceDataset::from_text(&read_relative(config_path, &cfg.dataset)?).stage("parsing dataset")?;
    ds.validate_against(&fm).stage("checking dataset")?;
    let zeros = || PolicyParams::zeros(fm.dim(), cfg.train.bound);
    let init = match &cfg.init {
        Some(p) => p.clone(),
        None => zeros().stage("building initial parameters")?,
    };
    let reference = match &cfg.reference {
        Some(p) => p.clone(),
        None => zeros().stage("building reference parameters")?,
    };
    let pp = PolicyPair::new(init, reference, cfg.train.beta).stage("building policy pair")?;
    let report = train(&cfg.train, &pp, &fm, &ds).stage("training")?;
    log::info!(
        "{}: {} epochs, final loss {:?}",
        cfg.train.label(),
        report.epochs_run,
        report.loss_trace.last()
    );
    out.json("params.json", &report.final_params)?;
    out.write("train_report.json", &report.to_json().stage("serializing report")?)?;
    out.write("loss_trace.csv", &report.to_csv())?;
    Ok(())
}

fn eval_shift(cfg: &ShiftCommandConfig, out: &mut Artifacts) -> CliResult<()> {
    let environment = Environment::generate(&cfg.env).stage("generating environment")?;
    let (r1, r2) = environment.competing_rewards(&cfg.env).stage("building rewards")?;
    let env = ShiftEnv {
        environment,
        r1,
        r2,
        n: cfg.n,
    };
    for mode in &cfg.modes {
        let spec = ShiftStudySpec {
            alpha_train: cfg.alpha_train,
            alpha_grid: cfg.alpha_grid.clone(),
            mode: *mode,
            methods: cfg.methods.clone(),
            seeds: cfg.seeds.clone(),
            env: env.clone(),
        };
        let report = shift_sweep(&spec).stage("shift sweep")?;
        for f in &report.failures {
            log::warn!("{} seed {} failed: {}", f.method, f.seed, f.error);
        }
        let name = serde_json::to_value(mode)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        out.write(&format!("shift_{name}.csv"), &report.to_csv())?;
        out.write(&format!("shift_{name}.json"), &report.summary_json().stage("serializing summary")?)?;
    }
    Ok(())
}

fn rate_exp(cfg: &RateCommandConfig, out: &mut Artifacts) -> CliResult<()> {
    let env = Environment::generate(&cfg.env).stage("generating environment")?;
    let bound = cfg.methods.first().map_or(cfg.theta_radius, |m| m.bound);
    let theta_true = env
        .random_parameter(derive_seed(cfg.seed, "rate-exp/theta"), cfg.theta_radius, bound)
        .stage("drawing ground-truth parameter")?;
    let largest = cfg.n_grid.iter().copied().max().unwrap_or(0);
    let spec = RateStudySpec {
        n_grid: cfg.n_grid.clone(),
        repetitions: cfg.repetitions,
        theta_true,
        env,
        reference_n: cfg.reference_n.unwrap_or(16 * largest),
        methods: cfg.methods.clone(),
        seed: cfg.seed,
        lambda: cfg.lambda,
        lr_from_smoothness: true,
        lr_scale: cfg.lr_scale,
    };
    let report = rate_experiment(&spec).stage("rate experiment")?;
    for fit in &report.fits {
        log::info!("{}: log-log slope {:?}", fit.method, fit.slope);
    }
    out.write("rate.csv", &report.to_csv())?;
    out.write("rate.json", &report.summary_json().stage("serializing summary")?)?;
    Ok(())
}

#[derive(Serialize)]
struct DistSummary {
    sync: SyncMode,
    max_abs_gap: f64,
    mean_abs_gap: f64,
    mean_loss_variance: f64,
}

fn dist_sim(cfg: &DistCommandConfig, out: &mut Artifacts) -> CliResult<()> {
    let env = Environment::generate(&cfg.env).stage("generating environment")?;
    let theta = env
        .random_parameter(derive_seed(cfg.seed, "dist-sim/theta"), cfg.theta_radius, cfg.theta_radius)
        .stage("drawing policy parameter")?;
    let reference = PolicyParams::zeros(env.fm.dim(), cfg.theta_radius).stage("building reference")?;
    let reward = realizable_reward(&theta, &reference, cfg.beta, &env.fm).stage("building reward")?;
    let spec = env.sampling_spec(cfg.n, derive_seed(cfg.seed, "dist-sim/sample"), None, "realizable");
    let ds = sample_dataset(&env.fm, &spec, &reward).stage("sampling dataset")?;
    // Losses are evaluated at the uniform policy's perturbation toward theta.
    let current = PolicyParams::new(theta.theta.iter().map(|v| -0.5 * v).collect(), cfg.theta_radius)
        .stage("building policy")?;
    let pp = PolicyPair::new(current, reference, cfg.beta).stage("building policy pair")?;
    let mut summaries = Vec::new();
    for (sync, name) in [(SyncMode::Local, "dist_local.csv"), (SyncMode::AllGather, "dist_all_gather.csv")] {
        let report = distributed_kernel_sim(&ds, cfg.tau, cfg.workers, cfg.microbatch, sync, &pp, &env.fm)
            .stage("distributed simulation")?;
        out.write(name, &report.to_csv())?;
        summaries.push(DistSummary {
            sync,
            max_abs_gap: report.max_abs_gap,
            mean_abs_gap: report.mean_abs_gap,
            mean_loss_variance: report.mean_loss_variance,
        });
    }
    out.json("dist.json", &summaries)?;
    Ok(())
}

fn verify_command(cfg: &VerifyConfig, out: &mut Artifacts) -> CliResult<()> {
    let report = verify::run_suite(cfg.seed, cfg.instances);
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        log::info!("{status} {}: {}", c.id, c.detail);
    }
    let path = out.json("verify_report.json", &report)?;
    if !report.passed {
        return Err(CliError::Verification {
            failed: report.failed(),
            total: report.checks.len() + report.unexecuted.len(),
            report: path,
        });
    }
    Ok(())
}
