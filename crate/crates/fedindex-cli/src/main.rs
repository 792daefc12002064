use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedindex_cli::config::load_config;
use fedindex_cli::experiment::{run_command, Verb};
use fedindex_cli::CliError;

/// Calibrate a shared parametric loss index over heterogeneous producers
/// with simulated federated optimization.
#[derive(Parser)]
#[command(name = "fedindex", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic population file; no training.
    Generate(CommonArgs),
    /// Run the Monte Carlo federated training and write traces, the
    /// summary, and the fitted coefficients.
    Train(CommonArgs),
    /// Basis-risk reports for the coefficient vectors under `[baselines]`.
    Evaluate(CommonArgs),
    /// Full pipeline: population, training, centralized oracle, and
    /// basis-risk reports for fitted, oracle, and baseline coefficients.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(verb: Verb, args: &CommonArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    run_command(verb, &cfg, &out_dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (verb, args) = match &cli.command {
        Command::Generate(args) => (Verb::Generate, args),
        Command::Train(args) => (Verb::Train, args),
        Command::Evaluate(args) => (Verb::Evaluate, args),
        Command::Report(args) => (Verb::Report, args),
    };
    match run(verb, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
