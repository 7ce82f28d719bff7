use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plume_cli::{cmd_diagnose, cmd_e2e, cmd_estimate, cmd_filter, cmd_simulate, load_config};

/// Pollution-source detection experiments: simulation, parameter
/// estimation, particle filtering and diagnostics.
#[derive(Parser)]
#[command(name = "plume", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the jump path and noisy observations.
    Simulate(StageArgs),
    /// Estimate the source location and release rate from observations.
    Estimate(StageArgs),
    /// Run the particle filter with estimated parameters.
    Filter(StageArgs),
    /// Run the distributional diagnostics.
    Diagnose(StageArgs),
    /// Full pipeline: simulate, estimate, filter, diagnose, figure data.
    E2e(StageArgs),
}

#[derive(clap::Args)]
struct StageArgs {
    /// Experiment config file (key=value text or JSON).
    /// Defaults to the bundled reference experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&StageArgs, fn(&plume_cli::ExperimentConfig, &std::path::Path) -> _) =
        match &cli.command {
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Estimate(a) => (a, cmd_estimate),
            Command::Filter(a) => (a, cmd_filter),
            Command::Diagnose(a) => (a, cmd_diagnose),
            Command::E2e(a) => (a, cmd_e2e),
        };
    let path = args
        .config
        .clone()
        .unwrap_or_else(|| plume_cli::bundled_config("default.cfg"));
    let mut config = match load_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(seed) = args.seed {
        config.model.seed = seed;
    }
    match run(&config, &args.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
