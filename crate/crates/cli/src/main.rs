//! `otae` — train and evaluate subject-weighted autoencoder–classifiers.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure or internal bug.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otae_core::{Error, ErrorCategory, Result};

#[derive(Debug, Parser)]
#[command(
    name = "otae",
    version,
    about = "Subject-weighted autoencoder training and evaluation",
    propagate_version = true
)]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for fold-level parallelism (default: OTAE_JOBS
    /// environment variable, then all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject classification dataset.
    Synth(commands::SynthArgs),
    /// Compute per-subject loss weights from transport distances.
    Weights(commands::WeightsArgs),
    /// Train an autoencoder–classifier and write a checkpoint.
    Train(commands::TrainArgs),
    /// Leave-one-subject-out evaluation.
    Loso(commands::LosoArgs),
    /// LOSO comparison of baseline and subject-weighted training.
    Compare(commands::CompareArgs),
    /// Encode a dataset and write a PCA projection of the latent space.
    Project(commands::ProjectArgs),
}

fn jobs_from_env() -> Result<Option<usize>> {
    match std::env::var("OTAE_JOBS") {
        Ok(raw) => {
            let parsed: usize = raw.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "OTAE_JOBS must be a positive integer, got {raw:?}"
                ))
            })?;
            if parsed == 0 {
                return Err(Error::Config(
                    "OTAE_JOBS must be a positive integer, got 0".to_string(),
                ));
            }
            Ok(Some(parsed))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(Error::Config(
            "OTAE_JOBS contains invalid UTF-8".to_string(),
        )),
    }
}

fn init_thread_pool(flag: Option<usize>) -> Result<()> {
    let jobs = match flag {
        Some(0) => {
            return Err(Error::Config(
                "--jobs must be a positive integer, got 0".to_string(),
            ))
        }
        Some(n) => Some(n),
        None => jobs_from_env()?,
    };
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(format!("thread pool initialisation failed: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool(cli.jobs)?;
    let file = config::load_file(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(args) => commands::synth(args, &file),
        Command::Weights(args) => commands::weights(args, &file),
        Command::Train(args) => commands::train_cmd(args, &file),
        Command::Loso(args) => commands::loso(args, &file),
        Command::Compare(args) => commands::compare(args, &file),
        Command::Project(args) => commands::project(args, &file),
    }
}

/// Restores the default SIGPIPE disposition so that piping into a consumer
/// that closes early (`otae weights ... | head`) terminates this process
/// quietly instead of panicking on the failed write.
#[cfg(unix)]
fn restore_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn restore_sigpipe() {}

fn main() -> ExitCode {
    restore_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            // --help/--version are successful outcomes, not usage errors.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.category() {
                ErrorCategory::Config => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numeric | ErrorCategory::Internal => 3,
            };
            ExitCode::from(code)
        }
    }
}
