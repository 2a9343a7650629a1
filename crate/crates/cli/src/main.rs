mod commands;
mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use oasis_core::baselines::BaselineKind;
use oasis_core::dan::Ablation;
use oasis_core::evalharness::ModelName;

#[derive(Debug, Parser)]
#[command(name = "oasis", version, about = "Salinity imputation from drifter trajectories")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize a trajectory CSV onto a (T, U, V, D) observation tensor.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// JSON grid file, or `UxV` / `UxV@SECONDS` to cover the data.
        #[arg(long, default_value = "32x32")]
        grid: String,
        /// `.csv` writes the text form, anything else the binary form.
        #[arg(long)]
        out: PathBuf,
        /// JSON column mapping for the input.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Generate a synthetic drifter dataset.
    Synth {
        /// JSON generator settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the noiseless field at every record.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train the imputation model and write a checkpoint.
    Train {
        /// Trajectory CSV or observation tensor (binary or CSV form).
        #[arg(long)]
        data: PathBuf,
        /// JSON training settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_ablation)]
        ablate: Vec<Ablation>,
        #[arg(long)]
        no_tide: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Tide gauge recorded in the checkpoint.
        #[arg(long)]
        station: Option<String>,
    },
    /// Fit a daily tide sinusoid to NOAA high/low predictions.
    Tide {
        #[arg(long, default_value = oasis_core::tide::DEFAULT_STATION)]
        station: String,
        /// YYYY-MM-DD.
        #[arg(long)]
        date: chrono::NaiveDate,
        /// Directory of recorded API responses.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Sampling interval of the printed curve, minutes.
        #[arg(long, default_value_t = 60)]
        every: i64,
    },
    /// Fit a baseline on a trajectory CSV and predict at query points.
    Baseline {
        #[arg(long, value_parser = parse_kind)]
        kind: BaselineKind,
        #[arg(long)]
        data: PathBuf,
        /// CSV with timestamp, lat, lon and any covariates.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON baseline settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one experiment (or one per seed) and print the results table.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelName>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full model plus the three single-component ablations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the imputed field of a checkpoint at one time as a PNG.
    Plot {
        #[arg(long)]
        ckpt: PathBuf,
        /// ISO-8601 UTC.
        #[arg(long)]
        time: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        nx: usize,
        #[arg(long, default_value_t = 48)]
        ny: usize,
        /// Tide height to use instead of the checkpoint's tide model.
        #[arg(long)]
        tide: Option<f64>,
    },
    /// Serve the HTTP imputation API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of recorded NOAA responses.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        station: Option<String>,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|e: oasis_core::baselines::BaselineError| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelName, String> {
    s.parse().map_err(|e: oasis_core::evalharness::EvalError| e.to_string())
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        oasis_core::Exec::Sequential
    } else {
        oasis_core::Exec::Parallel
    };
    match commands::run(cli.command, exec) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
