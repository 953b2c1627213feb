use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpd_core::interface::{
    cmd_estimate, cmd_gen_data, cmd_report, cmd_simulate, EstimateInput, InterfaceError, Parallelism, SimulateOptions,
};
use mpd_core::simulation::OutcomeForm;

/// Multiwave adaptive two-phase sampling: simulation studies and one-shot
/// estimation.
#[derive(Debug, Parser)]
#[command(name = "mpd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write replications.csv, summary.csv and
    /// manifest.toml.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads, or "auto".
        #[arg(long)]
        parallel: Option<Parallelism>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Estimate from a dataset with per-unit weights or a wave trace; prints
    /// CSV to stdout.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
        weights: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write a synthetic superpopulation as CSV.
    GenData {
        #[arg(long, default_value = "synthetic")]
        kind: String,
        #[arg(long, default_value_t = 1_000_000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Outcome::Literal)]
        outcome: Outcome,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary table of a finished run.
    Report {
        /// Run directory or summary.csv.
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Outcome {
    Literal,
    Trt,
}

fn run(cli: Cli) -> Result<(), InterfaceError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Simulate { config, out: dir, seed, reps, parallel, force } => {
            let options = SimulateOptions { out: dir.clone(), seed, replications: reps, parallel, force };
            cmd_simulate(&config, &options)?;
            cmd_report(&dir, &mut out)?;
        }
        Command::Estimate { config, data, weights, trace } => {
            let input = EstimateInput { config, data, weights, trace };
            cmd_estimate(&input, &mut out)?;
        }
        Command::GenData { kind, rows, seed, outcome, out: path } => {
            let outcome = match outcome {
                Outcome::Literal => OutcomeForm::Literal,
                Outcome::Trt => OutcomeForm::Treatment,
            };
            cmd_gen_data(&kind, rows, seed, outcome, &path)?;
        }
        Command::Report { path } => cmd_report(&path, &mut out)?,
    }
    out.flush().map_err(|e| InterfaceError::Io { path: "<stdout>".into(), message: e.to_string() })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPD_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
