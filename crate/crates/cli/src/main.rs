mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ConfigError;

#[derive(Parser)]
#[command(
    name = "dgp",
    version,
    about = "GP pseudo-label supervision for unpaired restoration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical self-checks and print a pass/fail table.
    Verify {
        /// Only run this suite (repeatable): linalg, kernels, gp, grad, metrics.
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Train a model; any config key can be overridden with `--key value`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on the synthetic test set or a manifest.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Paired manifest; the i-th weather entry is scored against the i-th clean one.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Sweep kernel depth, neighbor count and pseudo-loss weight.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// depth, neighbors, lambda or all.
        #[arg(long, default_value = "all")]
        axis: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { suites } => commands::verify(&suites),
        Command::Train { config, overrides } => commands::train(&config, &overrides),
        Command::Eval {
            config,
            checkpoint,
            manifest,
            overrides,
        } => commands::eval(&config, &checkpoint, manifest.as_deref(), &overrides),
        Command::Ablate {
            config,
            axis,
            overrides,
        } => commands::ablate(&config, &axis, &overrides),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
