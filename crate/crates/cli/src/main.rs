//! `somnoline`: every platform capability from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "somnoline", version, about = "PSG splitting, scoring, gray areas, agreement and serving")]
struct Cli {
    /// TOML configuration file for `serve` and `worker`.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut a multi-night EDF/EDF+ file into one file per night.
    Split {
        input: PathBuf,
        /// Gap between records, in seconds, that starts a new night.
        #[arg(long, default_value_t = somnoline_core::edf::DEFAULT_GAP_THRESHOLD_S)]
        gap: f64,
        /// JSON night manifest; takes precedence over gap detection.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Produce a hypnodensity CSV for one night.
    #[command(group(ArgGroup::new("scorer").required(true).args(["hypnodensity", "baseline"])))]
    Score {
        night: PathBuf,
        /// Validate and pass through a hypnodensity made elsewhere.
        #[arg(long)]
        hypnodensity: Option<PathBuf>,
        /// Score with the spectral baseline on this channel label.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, default_value_t = somnoline_core::staging::DEFAULT_EPOCH_LENGTH_S)]
        epoch_length: f64,
        /// Output CSV; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Tag gray-area epochs of a hypnodensity CSV.
    Gray {
        hypnodensity: PathBuf,
        #[arg(long, default_value_t = somnoline_core::gray::DEFAULT_THRESHOLD, conflicts_with = "fit")]
        threshold: f64,
        /// Estimate the threshold with a two-component Beta mixture.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = somnoline_core::staging::DEFAULT_EPOCH_LENGTH_S)]
        epoch_length: f64,
        /// Mask CSV; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write scoring labels with `uncertain-<stage>` gray epochs.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Fleiss' kappa over hypnogram CSVs.
    ///
    /// Without --layout every CSV in RATINGS is one rater of the same night.
    /// With --layout, RATINGS holds `<psg>/consensus/*.csv` and
    /// `<psg>/<technologist>.csv` and a per-technologist table is produced.
    Kappa {
        ratings: PathBuf,
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Gray mask CSV, or with --layout a directory of `<psg>.csv` masks.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Write the full result as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = somnoline_core::staging::DEFAULT_EPOCH_LENGTH_S)]
        epoch_length: f64,
    },
    /// Time the splitter and processor on synthetic three-night files.
    Bench {
        /// File sizes in Mo.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1920.0, 2160.0, 2400.0])]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        /// Bytes standing for one Mo; lower it for quick runs.
        #[arg(long, default_value_t = somnoline_pipeline::bench::MO)]
        unit_bytes: u64,
        /// Scratch directory; a temporary one when omitted.
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        /// Override the listen address from the config.
        #[arg(long)]
        listen: Option<String>,
        /// Run a splitter and a processor in the same process.
        #[arg(long)]
        workers: bool,
    },
    /// Run pipeline workers against a service.
    Worker {
        #[arg(long, value_enum, default_value_t = WorkerKind::All)]
        kind: WorkerKind,
        /// Override the service URL from the config.
        #[arg(long)]
        server: Option<String>,
    },
    /// Print or store a users-file entry with a salted secret hash.
    HashSecret {
        #[arg(long)]
        username: String,
        #[arg(long)]
        center: String,
        #[arg(long, value_enum, default_value_t = RoleArg::Technologist)]
        role: RoleArg,
        /// Read from stdin when omitted.
        #[arg(long)]
        secret: Option<String>,
        /// Add or replace the entry in this users file instead of printing it.
        #[arg(long)]
        users_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkerKind {
    Split,
    Process,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Technologist,
    Admin,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
