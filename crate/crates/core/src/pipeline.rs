//! Scene-level processing: candidate masking, APS compensation, per-pixel
//! inversion on a worker pool, export and scoring against ground truth.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_len, Result, TomoError};
use crate::estimators::{
    calibrate_penalty, CalibrationSetup, EstimatorConfig, Method, ModelPenalty, PixelProcessor,
    PixelResult, ScattererEstimate,
};
use crate::io::{
    point_records, write_point_cloud, PointRecord, StackFile, StackPixel, FORMAT_VERSION,
};
use crate::metrology::{accuracy_report, cloud_stats, AccuracyReport, CloudStats};
use crate::model::{build_dictionary, Axis, ElevationMotionGrid, MotionModel};
use crate::simulate::{
    add_noise, db_to_linear, derive_seed, forward_model, rng_from_seed, sample_geometry,
    GroundTruthScatterer,
};
use crate::C64;

/// Default inversion grid: ±40 m in 1 m steps, ±6 mm/yr, ±4 mm seasonal.
pub fn default_grid() -> ElevationMotionGrid {
    ElevationMotionGrid::new(
        Axis::linspace(-40.0, 40.0, 81).expect("valid axis"),
        Axis::linspace(-6.0, 6.0, 7).expect("valid axis"),
        Axis::linspace(-4.0, 4.0, 5).expect("valid axis"),
    )
    .expect("valid grid")
}

/// Settings of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Minimum signal-to-clutter ratio of a candidate (dB).
    pub scr_threshold_db: f64,
    /// Maximum sidelobe likelihood of a candidate.
    pub sidelobe_threshold: f64,
    pub coherence_threshold: f64,
    pub max_scatterers: usize,
    pub oversample_factor: usize,
    /// Double-scatterer false positive rate targeted by calibration.
    pub target_fpr: f64,
    pub solver: Method,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    /// Model-order penalty coefficient; calibrated when absent and
    /// `calibration_trials > 0`, else the estimator default.
    pub penalty: Option<f64>,
    pub calibration_trials: usize,
    pub calibration_snr_db: f64,
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    /// Overrides the grid stored in the stack file.
    pub grid: Option<ElevationMotionGrid>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scr_threshold_db: 1.7,
            sidelobe_threshold: 0.45,
            coherence_threshold: 0.6,
            max_scatterers: 2,
            oversample_factor: 10,
            target_fpr: 0.001,
            solver: Method::L1,
            delta: None,
            epsilon: None,
            penalty: None,
            calibration_trials: 0,
            calibration_snr_db: 10.0,
            seed: 0,
            workers: None,
            grid: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.scr_threshold_db.is_finite(), || {
            "SCR threshold must be finite".into()
        })?;
        ensure((0.0..=1.0).contains(&self.sidelobe_threshold), || {
            format!(
                "sidelobe threshold must lie in [0, 1], got {}",
                self.sidelobe_threshold
            )
        })?;
        ensure(self.target_fpr > 0.0 && self.target_fpr < 1.0, || {
            format!(
                "target false positive rate must lie in (0, 1), got {}",
                self.target_fpr
            )
        })?;
        ensure(self.workers != Some(0), || {
            "worker count must be positive".into()
        })?;
        if let Some(c) = self.penalty {
            ModelPenalty::new(c)?;
        }
        self.estimator_config().validate()
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let defaults = EstimatorConfig::default();
        EstimatorConfig {
            solver: self.solver,
            delta: self.delta,
            epsilon: self.epsilon,
            max_scatterers: self.max_scatterers,
            penalty: self
                .penalty
                .map(|coefficient| ModelPenalty { coefficient })
                .unwrap_or(defaults.penalty),
            oversample_factor: self.oversample_factor,
            coherence_threshold: self.coherence_threshold,
            ..defaults
        }
    }
}

/// Outcome of candidate masking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub total: usize,
    pub retained: usize,
    pub fraction: f64,
}

/// Indices of pixels with SCR ≥ threshold and sidelobe likelihood ≤
/// threshold.
pub fn mask_candidates(
    pixels: &[StackPixel],
    config: &PipelineConfig,
) -> Result<(Vec<usize>, MaskReport)> {
    let mut kept = Vec::new();
    for (i, p) in pixels.iter().enumerate() {
        let (Some(scr), Some(sidelobe)) = (p.scr_db, p.sidelobe_likelihood) else {
            return Err(
                TomoError::InvalidInput("pixel lacks SCR or sidelobe likelihood".into())
                    .at_stage("mask")
                    .at_pixel(p.id),
            );
        };
        if scr >= config.scr_threshold_db && sidelobe <= config.sidelobe_threshold {
            kept.push(i);
        }
    }
    let total = pixels.len();
    let report = MaskReport {
        total,
        retained: kept.len(),
        fraction: if total == 0 {
            0.0
        } else {
            kept.len() as f64 / total as f64
        },
    };
    Ok((kept, report))
}

/// `g_n·exp(−i·aps_n)`.
pub fn compensate_aps(g: &DVector<C64>, aps: &[f64]) -> Result<DVector<C64>> {
    ensure_len(g.len(), aps.len())?;
    Ok(DVector::from_iterator(
        g.len(),
        g.iter()
            .zip(aps)
            .map(|(z, &phi)| z * C64::from_polar(1.0, -phi)),
    ))
}

/// Synthetic scene with quality annotations, APS and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u64,
    pub height: u64,
    pub images: usize,
    /// Baselines are uniform in ±span (m).
    pub baseline_span: f64,
    pub wavelength: f64,
    pub master_range: f64,
    pub interval_days: f64,
    /// Exact share of pixels built to pass the default mask.
    pub candidate_fraction: f64,
    /// Share of candidates holding two scatterers.
    pub double_fraction: f64,
    /// SCR range of candidate scatterers (dB); noise power is 1.
    pub scr_db: [f64; 2],
    pub elevation: [f64; 2],
    pub velocity: [f64; 2],
    pub seasonal: [f64; 2],
    /// Elevation separation range of double scatterers (m).
    pub separation: [f64; 2],
    /// Adds a random planar phase screen per acquisition.
    pub aps: bool,
    pub area_km2: f64,
    pub seed: u64,
    pub motion: MotionModel,
    pub grid: Option<ElevationMotionGrid>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            images: 41,
            baseline_span: 250.0,
            wavelength: 0.031,
            master_range: 661_820.0,
            interval_days: 22.0,
            candidate_fraction: 0.12,
            double_fraction: 0.1,
            scr_db: [6.0, 15.0],
            elevation: [-30.0, 30.0],
            velocity: [-4.0, 4.0],
            seasonal: [-2.5, 2.5],
            separation: [25.0, 45.0],
            aps: true,
            area_km2: 0.01,
            seed: 1,
            motion: MotionModel::default(),
            grid: None,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0].min(range[1])..range[0].max(range[1]))
    }
}

pub fn simulate_scene(config: &SceneConfig) -> Result<StackFile> {
    ensure(config.width > 0 && config.height > 0, || {
        "scene must have pixels".into()
    })?;
    ensure((0.0..=1.0).contains(&config.candidate_fraction), || {
        "candidate fraction must lie in [0, 1]".into()
    })?;
    ensure((0.0..=1.0).contains(&config.double_fraction), || {
        "double fraction must lie in [0, 1]".into()
    })?;
    let geometry = sample_geometry(
        config.images,
        config.baseline_span,
        config.wavelength,
        config.master_range,
        config.interval_days,
        derive_seed(config.seed, u64::MAX),
    )?;
    let n = geometry.len();
    let master = geometry.master_index();
    let total = (config.width * config.height) as usize;
    let mut rng = rng_from_seed(derive_seed(config.seed, u64::MAX - 1));
    let candidates = (config.candidate_fraction * total as f64).round() as usize;
    let mut is_candidate = vec![false; total];
    for i in sample(&mut rng, total, candidates) {
        is_candidate[i] = true;
    }
    // Planar screen per acquisition, zero on the master.
    let screens: Vec<[f64; 3]> = (0..n)
        .map(|k| {
            if !config.aps || k == master {
                [0.0; 3]
            } else {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-PI..PI),
                ]
            }
        })
        .collect();
    let kernel = geometry.steering(config.motion);

    let pixels = (0..total)
        .into_par_iter()
        .map(|i| {
            let id = i as u64;
            let mut rng = rng_from_seed(derive_seed(config.seed, id));
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, s: f64, scr: f64| GroundTruthScatterer {
                s,
                v: uniform(rng, config.velocity),
                a: uniform(rng, config.seasonal),
                amplitude: db_to_linear(scr).sqrt(),
                phase: rng.random_range(-PI..PI),
            };
            let (scr, sidelobe, truth) = if is_candidate[i] {
                let scr = uniform(&mut rng, config.scr_db);
                let sidelobe = rng.random_range(0.0..0.4);
                let s0 = uniform(&mut rng, config.elevation);
                let mut truth = vec![draw(&mut rng, s0, scr)];
                if rng.random_bool(config.double_fraction) {
                    let sep = uniform(&mut rng, config.separation);
                    let s1 = if s0 + sep <= config.elevation[1] {
                        s0 + sep
                    } else {
                        s0 - sep
                    };
                    truth.push(draw(&mut rng, s1, scr));
                }
                (scr, sidelobe, truth)
            } else if rng.random_bool(0.5) {
                let scr = rng.random_range(-5.0..1.5);
                let s0 = uniform(&mut rng, config.elevation);
                (
                    scr,
                    rng.random_range(0.0..1.0),
                    vec![draw(&mut rng, s0, scr)],
                )
            } else {
                let scr = uniform(&mut rng, config.scr_db);
                let s0 = uniform(&mut rng, config.elevation);
                (
                    scr,
                    rng.random_range(0.5..1.0),
                    vec![draw(&mut rng, s0, scr)],
                )
            };
            let mut g = forward_model(&kernel, &truth);
            add_noise(&mut g, 1.0, &mut rng);
            let (row, col) = ((id / config.width) as f64, (id % config.width) as f64);
            let aps: Vec<f64> = screens
                .iter()
                .map(|c| {
                    2.0 * PI
                        * (c[0] * col / config.width as f64 + c[1] * row / config.height as f64)
                        + c[2]
                })
                .collect();
            for (z, &phi) in g.iter_mut().zip(&aps) {
                *z *= C64::from_polar(1.0, phi);
            }
            let mut pixel = StackPixel {
                id,
                g: Vec::new(),
                scr_db: Some(scr),
                sidelobe_likelihood: Some(sidelobe),
                aps: config.aps.then_some(aps),
                truth: Some(truth),
            };
            pixel.set_measurement(&g);
            pixel
        })
        .collect();

    Ok(StackFile {
        format_version: FORMAT_VERSION,
        geometry,
        motion: config.motion,
        grid: Some(config.grid.clone().unwrap_or_else(default_grid)),
        width: Some(config.width),
        area_km2: Some(config.area_km2),
        noise_power: Some(1.0),
        seed: Some(config.seed),
        pixels,
    })
}

/// Detection and localisation quality against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub pixels: usize,
    pub true_scatterers: usize,
    pub detected: usize,
    pub missed: usize,
    pub false_alarms: usize,
    pub detection_rate: f64,
    /// Matching radius in elevation (m).
    pub match_radius: f64,
    pub s_rmse: Option<f64>,
    pub s_errors: Option<AccuracyReport>,
}

/// Greedy nearest-elevation assignment within `radius`; returns
/// `(truth index, estimate index, estimate − truth)`.
pub fn match_scatterers(
    truth: &[GroundTruthScatterer],
    estimates: &[ScattererEstimate],
    radius: f64,
) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            let d = e.s - t.s;
            if d.abs() <= radius {
                pairs.push((i, j, d));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.2.abs()
            .total_cmp(&b.2.abs())
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; estimates.len()];
    let mut matches = Vec::new();
    for (i, j, d) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            matches.push((i, j, d));
        }
    }
    matches.sort_by_key(|m| m.0);
    matches
}

pub fn score(
    pairs: &[(&[GroundTruthScatterer], &PixelResult)],
    radius: f64,
) -> Result<ScoreReport> {
    let mut true_scatterers = 0;
    let mut detected = 0;
    let mut false_alarms = 0;
    let mut errors = Vec::new();
    for (truth, result) in pairs {
        let survivors: Vec<ScattererEstimate> = result.survivors().copied().collect();
        let matches = match_scatterers(truth, &survivors, radius);
        true_scatterers += truth.len();
        detected += matches.len();
        false_alarms += survivors.len() - matches.len();
        errors.extend(matches.iter().map(|m| m.2));
    }
    let s_errors = if errors.is_empty() {
        None
    } else {
        Some(accuracy_report(&errors)?)
    };
    Ok(ScoreReport {
        pixels: pairs.len(),
        true_scatterers,
        detected,
        missed: true_scatterers - detected,
        false_alarms,
        detection_rate: if true_scatterers == 0 {
            0.0
        } else {
            detected as f64 / true_scatterers as f64
        },
        match_radius: radius,
        s_rmse: (!errors.is_empty())
            .then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()),
        s_errors,
    })
}

/// Summary written next to the point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format_version: u32,
    pub mask: MaskReport,
    pub penalty_coefficient: f64,
    pub stats: CloudStats,
    pub truncated_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Per processed pixel, ordered by position in the stack.
    pub results: Vec<(u64, PixelResult)>,
    pub records: Vec<PointRecord>,
    pub report: PipelineReport,
}

fn stage<T>(result: Result<T>, name: &'static str) -> Result<T> {
    result.map_err(|e| e.at_stage(name))
}

/// Builds the pixel processor for a stack, calibrating the penalty when
/// configured to.
pub fn build_processor(stack: &StackFile, config: &PipelineConfig) -> Result<PixelProcessor> {
    let grid = config
        .grid
        .clone()
        .or_else(|| stack.grid.clone())
        .unwrap_or_else(default_grid)
        .with_motion(stack.motion);
    let dictionary = stage(build_dictionary(&stack.geometry, &grid), "dictionary")?;
    let mut processor = stage(
        PixelProcessor::new(dictionary, config.estimator_config()),
        "configure",
    )?;
    if config.penalty.is_none() && config.calibration_trials > 0 {
        let setup = CalibrationSetup::new(
            config.target_fpr,
            config.calibration_trials,
            config.seed,
            config.calibration_snr_db,
        );
        let penalty = stage(calibrate_penalty(&processor, &setup), "calibrate")?;
        processor.set_penalty(penalty);
    }
    Ok(processor)
}

/// Mask → APS compensation → inversion → rejection → statistics.
pub fn run_pipeline(stack: &StackFile, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    stage(stack.validate(), "read")?;
    let (candidates, mask) = mask_candidates(&stack.pixels, config)?;
    let processor = build_processor(stack, config)?;

    let invert = |&index: &usize| -> Result<(u64, PixelResult)> {
        let pixel = &stack.pixels[index];
        let mut g = pixel.measurement();
        if let Some(aps) = &pixel.aps {
            g = compensate_aps(&g, aps).map_err(|e| e.at_stage("aps").at_pixel(pixel.id))?;
        }
        let result = processor
            .process(&g, stack.noise_power)
            .map_err(|e| e.at_stage("invert").at_pixel(pixel.id))?;
        Ok((pixel.id, result))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| TomoError::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(u64, PixelResult)> =
        pool.install(|| candidates.par_iter().map(invert).collect::<Result<_>>())?;

    let records = point_records(results.iter().map(|(id, r)| (*id, r)));
    let stats = stage(
        cloud_stats(
            results.iter().map(|(_, r)| r),
            stack.area_km2.unwrap_or(1.0),
        ),
        "stats",
    )?;
    let truth_pairs: Vec<(&[GroundTruthScatterer], &PixelResult)> = candidates
        .iter()
        .zip(&results)
        .filter_map(|(&i, (_, r))| stack.pixels[i].truth.as_deref().map(|t| (t, r)))
        .collect();
    let score = if truth_pairs.is_empty() {
        None
    } else {
        Some(stage(
            score(&truth_pairs, stack.geometry.elevation_resolution() / 2.0),
            "score",
        )?)
    };
    let report = PipelineReport {
        format_version: FORMAT_VERSION,
        mask,
        penalty_coefficient: processor.config().penalty.coefficient,
        stats,
        truncated_pixels: results.iter().filter(|(_, r)| r.truncated).count(),
        score,
    };
    Ok(PipelineOutput {
        results,
        records,
        report,
    })
}

/// Runs the pipeline on a stack file and writes the point-cloud CSV and the
/// JSON report.
pub fn run_pipeline_files(
    stack_path: &Path,
    cloud_path: &Path,
    stats_path: &Path,
    config: &PipelineConfig,
) -> Result<PipelineReport> {
    let stack = stage(crate::io::read_stack_file(stack_path), "read")?;
    let output = run_pipeline(&stack, config)?;
    let write = || -> Result<()> {
        let mut cloud = BufWriter::new(File::create(cloud_path)?);
        write_point_cloud(&mut cloud, &output.records)?;
        cloud.flush()?;
        let mut stats = BufWriter::new(File::create(stats_path)?);
        serde_json::to_writer_pretty(&mut stats, &output.report)?;
        stats.write_all(b"\n")?;
        stats.flush()?;
        Ok(())
    };
    stage(write(), "export")?;
    Ok(output.report)
}
