//! `grassmann-stream`: run, sweep, verify and bound-evaluation commands.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error,
//! 3 runtime or generation failure.

mod commands;
mod error;
mod output;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "grassmann-stream", version, about = "Streaming subspace estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trial and write series and summary files.
    Run(CommonArgs),
    /// Run trials over a grid of sizes and write per-cell iteration ratios.
    Sweep(CommonArgs),
    /// Check per-step identities and compare improvement against theory.
    Verify(CommonArgs),
    /// Evaluate the theoretical bounds for a set of parameters.
    Bounds(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "GS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for independent trials.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    pub fn out_dir(&self) -> CliResult<&PathBuf> {
        self.out
            .as_ref()
            .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
    }
}

fn configure_threads(jobs: Option<usize>) -> CliResult<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run(args) => {
            configure_threads(args.jobs)?;
            commands::run(&args)
        }
        Command::Sweep(args) => {
            configure_threads(args.jobs)?;
            commands::sweep(&args)
        }
        Command::Verify(args) => {
            configure_threads(args.jobs)?;
            commands::verify(&args)
        }
        Command::Bounds(args) => commands::bounds(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
