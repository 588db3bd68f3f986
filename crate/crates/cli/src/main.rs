//! `tomosar`: simulate stacks, calibrate and run the inversion, fit planes
//! and report statistics.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tomosar",
    version,
    about = "Multibaseline SAR tomography toolkit"
)]
pub struct Cli {
    /// TOML configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic stack with quality annotations and ground truth.
    Simulate(SimulateArgs),
    /// Calibrate the model-order penalty to a false positive rate.
    Calibrate(CalibrateArgs),
    /// Run the processing chain on a stack file.
    Invert(InvertArgs),
    /// Robust plane fit of a point cloud.
    PlaneFit(PlaneFitArgs),
    /// Point-cloud counts, density and height accuracy.
    Stats(StatsArgs),
    /// Elevation resolution and Cramér-Rao bound.
    Crlb(CrlbArgs),
    /// Raw-to-image time conversion and Doppler-centroid lookup.
    Doppler(DopplerArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output stack file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub width: Option<u64>,
    #[arg(long)]
    pub height: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub candidate_fraction: Option<f64>,
    #[arg(long)]
    pub double_fraction: Option<f64>,
    #[arg(long)]
    pub area_km2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave out the atmospheric phase screen.
    #[arg(long)]
    pub no_aps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Tikhonov,
    L1,
}

/// Flags shared by `calibrate` and `invert`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long)]
    pub scr_threshold_db: Option<f64>,
    #[arg(long)]
    pub sidelobe_threshold: Option<f64>,
    #[arg(long)]
    pub coherence_threshold: Option<f64>,
    #[arg(long)]
    pub max_scatterers: Option<usize>,
    #[arg(long)]
    pub oversample_factor: Option<usize>,
    #[arg(long)]
    pub target_fpr: Option<f64>,
    /// Tikhonov regularization weight.
    #[arg(long)]
    pub delta: Option<f64>,
    /// ℓ1 residual bound.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Fixed model-order penalty coefficient; skips calibration.
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub calibration_trials: Option<usize>,
    #[arg(long)]
    pub calibration_snr_db: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Stack file supplying geometry and grid.
    #[arg(long)]
    pub stack: PathBuf,
    /// Fresh trials used to check the calibrated penalty; 0 skips the check.
    #[arg(long, default_value_t = 0)]
    pub validation_trials: usize,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub stack: PathBuf,
    /// Point-cloud CSV.
    #[arg(long)]
    pub cloud: PathBuf,
    /// JSON report with mask, statistics and scores.
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CloudFormat {
    /// Point-cloud CSV written by `invert`.
    Cloud,
    /// CSV with x, y and z columns.
    Xyz,
}

#[derive(Debug, Args)]
pub struct PlaneFitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = CloudFormat::Cloud)]
    pub format: CloudFormat,
    /// Raster width for placing point-cloud pixels.
    #[arg(long)]
    pub width: Option<u64>,
    #[arg(long)]
    pub spacing_x: Option<f64>,
    #[arg(long)]
    pub spacing_y: Option<f64>,
    /// Plane coefficients CSV; standard output when absent.
    #[arg(long)]
    pub plane: Option<PathBuf>,
    /// Per-point residual and distance CSV.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Point-cloud CSV written by `invert`.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Distance CSV written by `plane-fit`.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Scene area for the density.
    #[arg(long)]
    pub area_km2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CrlbArgs {
    #[arg(long)]
    pub wavelength: Option<f64>,
    /// Slant range (m).
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub baseline_std: Option<f64>,
    #[arg(long)]
    pub aperture: Option<f64>,
    /// Take wavelength, range, image count, spread and aperture from a stack.
    #[arg(long)]
    pub stack: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DopplerArgs {
    /// Raw-data azimuth time (s).
    #[arg(long, allow_negative_numbers = true)]
    pub raw_time: Option<f64>,
    /// Image azimuth time (s); derived from `raw_time` when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub time: Option<f64>,
    /// Linear Doppler-centroid model c0 + c1·t (Hz, Hz/s).
    #[arg(long, num_args = 2, value_names = ["C0", "C1"], allow_negative_numbers = true)]
    pub fdc: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub fm_rate: Option<f64>,
    /// Annotation grid file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Which grid record of the file to use.
    #[arg(long, default_value_t = 0)]
    pub burst: usize,
    /// Slant range (m) of the grid lookup.
    #[arg(long)]
    pub range: Option<f64>,
    #[arg(long)]
    pub allow_extrapolation: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", report::usage_record(&e.render().to_string()));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{}", report::error_record(&error));
            ExitCode::FAILURE
        }
    }
}
