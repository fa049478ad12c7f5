use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpcert::experiments::{load_config, run, ExperimentKind, Overrides};
use gpcert::Error;

#[derive(Parser)]
#[command(name = "gpcert", version, about = "Certified Gaussian-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior variance decay against its upper bounds.
    VarDecay(RunArgs),
    /// Violation rates of the uniform error bound with and without prior constraints.
    ErrorBound(RunArgs),
    /// Certified tracking of a learned two-state system.
    Tracking(RunArgs),
    /// Certified joint-space tracking of a two-link arm.
    Robot(RunArgs),
    /// Hyperparameter fit on user data.
    Fit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    full_scale: bool,
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<Vec<PathBuf>, Error> {
    let mut cfg = load_config(&args.config)?;
    if cfg.kind() != kind {
        return Err(Error::Config(format!(
            "{} describes a {} experiment, not {}",
            args.config.display(),
            cfg.kind().name(),
            kind.name()
        )));
    }
    if args.reps == Some(0) {
        return Err(Error::Config("--reps must be >= 1".into()));
    }
    cfg.apply(&Overrides {
        seed: args.seed,
        reps: args.reps,
        full_scale: args.full_scale,
    });
    run(&cfg, &args.out, args.config.parent())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::VarDecay(a) => (ExperimentKind::VarDecay, a),
        Command::ErrorBound(a) => (ExperimentKind::ErrorBound, a),
        Command::Tracking(a) => (ExperimentKind::Tracking, a),
        Command::Robot(a) => (ExperimentKind::Robot, a),
        Command::Fit(a) => (ExperimentKind::Fit, a),
    };
    match execute(kind, args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gpcert: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
