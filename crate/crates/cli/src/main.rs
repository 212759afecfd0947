use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "delaymp", version, about = "Run delayed stochastic control experiments from a config file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a previous run's manifest).
    Run {
        config: PathBuf,
        /// Cap on solver worker threads; results are identical for any value.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory, overriding the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, threads, out } => ExitCode::from(delaymp_cli::run(&config, threads, out) as u8),
    }
}
