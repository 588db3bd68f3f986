use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;
use tomosar_core::doppler::{
    parse_doppler_grids, raw_to_image_time, DopplerPolynomial, Extrapolation,
};
use tomosar_core::estimators::false_positive_rate;
use tomosar_core::io::{
    cloud_from_records, read_point_cloud, read_stack_file, read_vertical_residuals, read_xyz,
    write_distances, write_plane, write_stack_file, FORMAT_VERSION,
};
use tomosar_core::metrology::{accuracy_report, crlb_elevation, elevation_resolution, CloudStats};
use tomosar_core::pipeline::{build_processor, run_pipeline_files, simulate_scene, PipelineConfig};
use tomosar_core::plane::fit_plane_l1;
use tomosar_core::simulate::db_to_linear;
use tomosar_core::Method;

use crate::config::ConfigFile;
use crate::{
    CalibrateArgs, Cli, CloudFormat, Command, CrlbArgs, DopplerArgs, InvertArgs, PipelineArgs,
    PlaneFitArgs, SimulateArgs, SolverArg, StatsArgs,
};

/// Training trials of `calibrate` when neither flag nor config sets them.
const DEFAULT_CALIBRATION_TRIALS: usize = 10_000;

pub fn run(cli: Cli) -> Result<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => simulate(args, config),
        Command::Calibrate(args) => calibrate(args, config),
        Command::Invert(args) => invert(args, config),
        Command::PlaneFit(args) => plane_fit(args, config),
        Command::Stats(args) => stats(args, config),
        Command::Crlb(args) => crlb(args, config),
        Command::Doppler(args) => doppler(args, config),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(value) = flag {
        *slot = value;
    }
}

fn simulate(args: SimulateArgs, config: ConfigFile) -> Result<()> {
    let mut scene = config.scene;
    set(&mut scene.width, args.width);
    set(&mut scene.height, args.height);
    set(&mut scene.images, args.images);
    set(&mut scene.candidate_fraction, args.candidate_fraction);
    set(&mut scene.double_fraction, args.double_fraction);
    set(&mut scene.area_km2, args.area_km2);
    set(&mut scene.seed, args.seed);
    if args.no_aps {
        scene.aps = false;
    }
    let stack = simulate_scene(&scene)?;
    write_stack_file(&args.out, &stack)
        .with_context(|| format!("writing {}", args.out.display()))?;
    print_json(&json!({
        "format_version": FORMAT_VERSION,
        "stack": args.out,
        "pixels": stack.pixels.len(),
        "images": stack.geometry.len(),
        "seed": scene.seed,
    }))
}

fn pipeline_config(mut config: PipelineConfig, args: PipelineArgs) -> PipelineConfig {
    set(
        &mut config.solver,
        args.solver.map(|s| match s {
            SolverArg::Tikhonov => Method::Tikhonov,
            SolverArg::L1 => Method::L1,
        }),
    );
    set(&mut config.scr_threshold_db, args.scr_threshold_db);
    set(&mut config.sidelobe_threshold, args.sidelobe_threshold);
    set(&mut config.coherence_threshold, args.coherence_threshold);
    set(&mut config.max_scatterers, args.max_scatterers);
    set(&mut config.oversample_factor, args.oversample_factor);
    set(&mut config.target_fpr, args.target_fpr);
    set(&mut config.calibration_trials, args.calibration_trials);
    set(&mut config.calibration_snr_db, args.calibration_snr_db);
    set(&mut config.seed, args.seed);
    if args.delta.is_some() {
        config.delta = args.delta;
    }
    if args.epsilon.is_some() {
        config.epsilon = args.epsilon;
    }
    if args.penalty.is_some() {
        config.penalty = args.penalty;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    config
}

fn calibrate(args: CalibrateArgs, config: ConfigFile) -> Result<()> {
    let mut pipeline = pipeline_config(config.pipeline, args.pipeline);
    pipeline.penalty = None;
    if pipeline.calibration_trials == 0 {
        pipeline.calibration_trials = DEFAULT_CALIBRATION_TRIALS;
    }
    pipeline.validate()?;
    let stack = read_stack_file(&args.stack)
        .with_context(|| format!("reading {}", args.stack.display()))?;
    let processor = build_processor(&stack, &pipeline)?;
    let penalty = processor.config().penalty;
    let validation = if args.validation_trials > 0 {
        let seed = pipeline.seed.wrapping_add(1);
        let fpr = false_positive_rate(
            &processor,
            penalty,
            pipeline.calibration_snr_db,
            args.validation_trials,
            seed,
        )?;
        Some(json!({ "trials": args.validation_trials, "seed": seed, "fpr": fpr }))
    } else {
        None
    };
    let report = json!({
        "format_version": FORMAT_VERSION,
        "penalty_coefficient": penalty.coefficient,
        "target_fpr": pipeline.target_fpr,
        "trials": pipeline.calibration_trials,
        "snr_db": pipeline.calibration_snr_db,
        "seed": pipeline.seed,
        "validation": validation,
    });
    match args.out {
        Some(path) => {
            let mut w = create(&path)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        None => print_json(&report),
    }
}

fn invert(args: InvertArgs, config: ConfigFile) -> Result<()> {
    let pipeline = pipeline_config(config.pipeline, args.pipeline);
    let report = run_pipeline_files(&args.stack, &args.cloud, &args.report, &pipeline)?;
    print_json(&report)
}

fn plane_fit(args: PlaneFitArgs, config: ConfigFile) -> Result<()> {
    let mut plane = config.plane;
    set(&mut plane.rho, args.rho);
    set(&mut plane.abs_tol, args.abs_tol);
    set(&mut plane.rel_tol, args.rel_tol);
    set(&mut plane.max_iter, args.max_iter);
    set(&mut plane.spacing[0], args.spacing_x);
    set(&mut plane.spacing[1], args.spacing_y);
    if args.width.is_some() {
        plane.width = args.width;
    }
    let cloud = match args.format {
        CloudFormat::Xyz => read_xyz(open(&args.input)?)?,
        CloudFormat::Cloud => {
            let Some(width) = plane.width else {
                bail!("a point-cloud input needs the raster width (--width or plane.width)");
            };
            cloud_from_records(&read_point_cloud(open(&args.input)?)?, width, plane.spacing)?
        }
    };
    let fitted = fit_plane_l1(&cloud, &plane.admm())?;
    match &args.plane {
        Some(path) => {
            let mut w = create(path)?;
            write_plane(&mut w, &fitted)?;
            w.flush()?;
        }
        None => write_plane(io::stdout().lock(), &fitted)?,
    }
    if let Some(path) = &args.distances {
        let mut w = create(path)?;
        write_distances(&mut w, &cloud, &fitted)?;
        w.flush()?;
    }
    Ok(())
}

fn stats(args: StatsArgs, config: ConfigFile) -> Result<()> {
    ensure!(
        args.cloud.is_some() || args.distances.is_some(),
        "nothing to summarise: pass --cloud and/or --distances"
    );
    let cloud = match &args.cloud {
        Some(path) => {
            let area = args
                .area_km2
                .or(config.stats.area_km2)
                .context("density needs the scene area (--area-km2 or stats.area_km2)")?;
            let mut per_pixel: BTreeMap<u64, u64> = BTreeMap::new();
            for record in read_point_cloud(open(path)?)?
                .iter()
                .filter(|r| r.rejected_flag == 0)
            {
                *per_pixel.entry(record.pixel_id).or_default() += 1;
            }
            let count = |k: u64| per_pixel.values().filter(|&&n| n == k).count() as u64;
            ensure!(
                per_pixel.values().all(|&n| n <= 2),
                "more than two scatterers in a pixel"
            );
            Some(CloudStats::from_counts(count(1), count(2), area)?)
        }
        None => None,
    };
    let accuracy = match &args.distances {
        Some(path) => Some(accuracy_report(&read_vertical_residuals(open(path)?)?)?),
        None => None,
    };
    print_json(&json!({
        "format_version": FORMAT_VERSION,
        "cloud": cloud,
        "height_accuracy": accuracy,
    }))
}

fn crlb(args: CrlbArgs, config: ConfigFile) -> Result<()> {
    let mut c = config.crlb;
    if let Some(path) = &args.stack {
        let geometry = read_stack_file(path)
            .with_context(|| format!("reading {}", path.display()))?
            .geometry;
        c.wavelength = geometry.wavelength();
        c.range = geometry.master_range();
        c.images = geometry.len();
        c.baseline_std = geometry.baseline_std();
        c.aperture = geometry.aperture();
    }
    set(&mut c.wavelength, args.wavelength);
    set(&mut c.range, args.range);
    set(&mut c.images, args.images);
    set(&mut c.snr_db, args.snr_db);
    set(&mut c.baseline_std, args.baseline_std);
    set(&mut c.aperture, args.aperture);
    let rho = elevation_resolution(c.wavelength, c.range, c.aperture)?;
    let sigma = crlb_elevation(
        c.wavelength,
        c.range,
        c.images,
        db_to_linear(c.snr_db),
        c.baseline_std,
    )?;
    print_json(&json!({
        "format_version": FORMAT_VERSION,
        "elevation_resolution_m": rho,
        "crlb_m": sigma,
        "ratio": sigma / rho,
        "inputs": {
            "wavelength": c.wavelength,
            "range": c.range,
            "images": c.images,
            "snr_db": c.snr_db,
            "baseline_std": c.baseline_std,
            "aperture": c.aperture,
        },
    }))
}

fn doppler(args: DopplerArgs, config: ConfigFile) -> Result<()> {
    let time = match (args.time, args.raw_time) {
        (Some(t), _) => t,
        (None, Some(raw)) => {
            let Some([c0, c1]) = args.fdc.as_deref().map(|c| [c[0], c[1]]) else {
                bail!("converting a raw time needs --fdc C0 C1");
            };
            let fm = args
                .fm_rate
                .or(config.doppler.fm_rate)
                .context("converting a raw time needs --fm-rate")?;
            raw_to_image_time(raw, &DopplerPolynomial::new(c0, c1), fm)?
        }
        (None, None) => bail!("pass --time or --raw-time"),
    };
    let lookup = match &args.grid {
        Some(path) => {
            let range = args.range.context("a grid lookup needs --range")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let grids = parse_doppler_grids(&text)?;
            let grid = grids.get(args.burst).with_context(|| {
                format!(
                    "grid file holds {} records, no index {}",
                    grids.len(),
                    args.burst
                )
            })?;
            let policy = if args.allow_extrapolation || config.doppler.allow_extrapolation {
                Extrapolation::Allow
            } else {
                Extrapolation::Reject
            };
            let value = grid.interpolate(time, range, policy)?;
            Some(
                json!({ "range": range, "fdc_hz": value.value, "extrapolated": value.extrapolated }),
            )
        }
        None => None,
    };
    print_json(&json!({
        "format_version": FORMAT_VERSION,
        "image_time": time,
        "lookup": lookup,
    }))
}
