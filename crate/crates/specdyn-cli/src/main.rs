use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specdyn_cli::commands;
use specdyn_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "specdyn", version, about = "Low-rank transition kernel estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a diffusion trajectory and write it in binary form
    Simulate(RunArgs),
    /// Build feature maps, accumulate and reshape the projection, fit the embedding
    Fit(RunArgs),
    /// Cluster embedded trajectory states into metastable sets
    Cluster(RunArgs),
    /// Compare plain and reshaped estimation errors against the quadrature reference
    Benchmark(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Directory for artifacts (created if absent)
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn run(args: &RunArgs, f: impl FnOnce(&RunConfig, &std::path::Path) -> Result<(), CliError>) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let config = RunConfig::load(&args.config)?;
    f(&config, &args.out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run(a, |c, d| commands::cmd_simulate(c, d).map(|_| ())),
        Command::Fit(a) => run(a, |c, d| commands::cmd_fit(c, d).map(|_| ())),
        Command::Cluster(a) => run(a, |c, d| commands::cmd_cluster(c, d).map(|_| ())),
        Command::Benchmark(a) => run(a, |c, d| commands::cmd_benchmark(c, d).map(|_| ())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
