use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpspace::cli::{parse_config, run, CommandKind, Overrides};

/// Sampling, verification, and simulation driver for compound point
/// processes on a box domain.
#[derive(Parser)]
#[command(name = "cpspace", version, about)]
struct Args {
    /// Path to the run configuration file
    #[arg(long)]
    config: PathBuf,

    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the sample count
    #[arg(long)]
    n: Option<u64>,

    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write CSV output
    #[arg(long)]
    csv: bool,

    /// Override the pass/fail z threshold
    #[arg(long)]
    z_max: Option<f64>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw configurations and write them to data.jsonl
    Sample,
    /// Run Monte Carlo checks and write report.json
    Verify {
        /// Restrict to one check group (default: all)
        check: Option<String>,
    },
    /// Integrate the interacting-particle dynamics and write trajectory.jsonl
    Simulate,
    /// Compare candidate operator weightings against the quadratic form
    Adjudicate,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let (command, check) = match args.command {
        None => (None, None),
        Some(Command::Sample) => (Some(CommandKind::Sample), None),
        Some(Command::Verify { check }) => (Some(CommandKind::Verify), check),
        Some(Command::Simulate) => (Some(CommandKind::Simulate), None),
        Some(Command::Adjudicate) => (Some(CommandKind::Adjudicate), None),
    };
    let overrides = Overrides {
        command,
        check,
        seed: args.seed,
        n: args.n,
        out: args.out,
        csv: args.csv,
        z_max: args.z_max,
    };
    match run(&config, &overrides) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
