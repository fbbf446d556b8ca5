//! `dhym`: solve, continue, check and manufacture dHYM instances from a config file.

mod commands;
mod config;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dhym", version, about = "Hypercritical dHYM solver on almost Hermitian tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the config `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for (u, c) and write the solution and a result record.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        skip_subsolution_check: bool,
    },
    /// Run the continuity path from the supersolution to h₁.
    Path {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from the last checkpoint in the output directory.
        #[arg(long)]
        restart: bool,
    },
    /// Validate the structure and the sub/supersolution hypotheses. With no
    /// flags, every check runs.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        subsolution: bool,
        #[arg(long)]
        supersolution: bool,
        #[arg(long)]
        structure: bool,
    },
    /// Write h = phase(u*) for the configured u*.
    Manufacture {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve {
            common,
            skip_subsolution_check,
        } => commands::cmd_solve(&common, skip_subsolution_check),
        Command::Path { common, restart } => commands::cmd_path(&common, restart),
        Command::Check {
            common,
            subsolution,
            supersolution,
            structure,
        } => {
            let none = !(subsolution || supersolution || structure);
            commands::cmd_check(
                &common,
                commands::CheckSelection {
                    subsolution: subsolution || none,
                    supersolution: supersolution || none,
                    structure: structure || none,
                },
            )
        }
        Command::Manufacture { common } => commands::cmd_manufacture(&common),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
