use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drdpo_cli::{execute, Command, RunManifest};

#[derive(Parser)]
#[command(name = "drdpo", version, about = "Robust direct preference optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample a preference dataset from a synthetic environment.
    GenData(RunArgs),
    /// Train DPO, WDPO or KLDPO on a dataset.
    Train(RunArgs),
    /// Reward-shift robustness sweep.
    EvalShift(RunArgs),
    /// Estimation-rate study.
    RateExp(RunArgs),
    /// Distributed kernel synchronization simulation.
    DistSim(RunArgs),
    /// Run the oracle and invariant suite.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Log filter, e.g. `info` or `drdpo=debug`.
    #[arg(long, default_value = "info")]
    log: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::GenData(a) => (Command::GenData, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::EvalShift(a) => (Command::EvalShift, a),
        Sub::RateExp(a) => (Command::RateExp, a),
        Sub::DistSim(a) => (Command::DistSim, a),
        Sub::Verify(a) => (Command::Verify, a),
    };
    env_logger::Builder::new().parse_filters(&args.log).init();
    let run = RunManifest {
        command,
        config_path: args.config,
        out_dir: args.out,
    };
    match execute(&run) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
