//! Resolution and accuracy bounds, height-error statistics and point-cloud
//! counts.
//!
//! All arguments are linear quantities; decibel conversion belongs to the
//! caller.

use std::borrow::Borrow;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::estimators::PixelResult;

fn positive(name: &str, value: f64) -> Result<()> {
    ensure(value.is_finite() && value > 0.0, || {
        format!("{name} must be positive, got {value}")
    })
}

/// Rayleigh elevation resolution `λr/(2Δb)`.
pub fn elevation_resolution(wavelength: f64, range: f64, aperture: f64) -> Result<f64> {
    positive("wavelength", wavelength)?;
    positive("range", range)?;
    positive("elevation aperture", aperture)?;
    Ok(wavelength * range / (2.0 * aperture))
}

/// Lower bound on the elevation standard deviation of a single scatterer,
/// `λr/(4π·√N·√(2·SNR)·σ_b)`.
pub fn crlb_elevation(
    wavelength: f64,
    range: f64,
    n_images: usize,
    snr_linear: f64,
    sigma_b: f64,
) -> Result<f64> {
    positive("wavelength", wavelength)?;
    positive("range", range)?;
    ensure(n_images > 0, || "number of images must be positive".into())?;
    positive("SNR", snr_linear)?;
    positive("baseline standard deviation", sigma_b)?;
    Ok(wavelength * range
        / (4.0 * PI * (n_images as f64).sqrt() * (2.0 * snr_linear).sqrt() * sigma_b))
}

/// Location and spread of height errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub median: f64,
    pub mean: f64,
    /// Median absolute deviation from the median (unscaled).
    pub mad: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    pub count: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

pub fn accuracy_report(errors: &[f64]) -> Result<AccuracyReport> {
    ensure(!errors.is_empty(), || {
        "accuracy report of an empty error vector".into()
    })?;
    ensure(errors.iter().all(|e| e.is_finite()), || {
        "errors must be finite".into()
    })?;
    let count = errors.len();
    let med = median(errors).expect("non-empty");
    let deviations: Vec<f64> = errors.iter().map(|e| (e - med).abs()).collect();
    let mad = median(&deviations).expect("non-empty");
    let mean = errors.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(AccuracyReport {
        median: med,
        mean,
        mad,
        std,
        count,
    })
}

/// Scatterer counts of a reconstructed point cloud.
///
/// `n_total` counts pixels holding one or two scatterers (singles + doubles);
/// `n_scatterers` counts points (singles + 2·doubles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub n_single: u64,
    pub n_double: u64,
    pub n_total: u64,
    pub n_scatterers: u64,
    /// km².
    pub area: f64,
    /// `n_total` per km².
    pub density: f64,
    /// Singles per double; `None` without doubles.
    pub single_double_ratio: Option<f64>,
}

impl CloudStats {
    pub fn from_counts(n_single: u64, n_double: u64, area: f64) -> Result<Self> {
        positive("area", area)?;
        let n_total = n_single + n_double;
        Ok(Self {
            n_single,
            n_double,
            n_total,
            n_scatterers: n_single + 2 * n_double,
            area,
            density: n_total as f64 / area,
            single_double_ratio: (n_double > 0).then(|| n_single as f64 / n_double as f64),
        })
    }
}

/// Counts pixels with one and two surviving scatterers.
pub fn cloud_stats<I>(results: I, area: f64) -> Result<CloudStats>
where
    I: IntoIterator,
    I::Item: Borrow<PixelResult>,
{
    positive("area", area)?;
    let (mut single, mut double) = (0u64, 0u64);
    for r in results {
        match r.borrow().surviving_count() {
            1 => single += 1,
            2 => double += 1,
            _ => {}
        }
    }
    CloudStats::from_counts(single, double, area)
}

/// Larger value divided by the smaller one.
pub fn larger_to_smaller(a: f64, b: f64) -> Option<f64> {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    (lo > 0.0).then(|| hi / lo)
}

/// Two-column comparison with a ratio column, as aligned text.
#[derive(Debug, Clone, Default)]
pub struct ComparisonTable {
    headers: [String; 2],
    rows: Vec<(String, f64, f64, bool)>,
}

impl ComparisonTable {
    pub fn new(left: impl Into<String>, right: impl Into<String>) -> Self {
        Self {
            headers: [left.into(), right.into()],
            rows: Vec::new(),
        }
    }

    /// Adds a row; `with_ratio = false` prints "n.a." in the ratio column.
    pub fn row(
        mut self,
        label: impl Into<String>,
        left: f64,
        right: f64,
        with_ratio: bool,
    ) -> Self {
        self.rows.push((label.into(), left, right, with_ratio));
        self
    }

    pub fn ratios(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|&(_, l, r, with)| if with { larger_to_smaller(l, r) } else { None })
            .collect()
    }

    pub fn render(&self) -> String {
        let fmt = |x: f64| {
            if x.fract() == 0.0 && x.abs() < 1e15 {
                format!("{x:.0}")
            } else {
                format!("{x:.2}")
            }
        };
        let label_width = self
            .rows
            .iter()
            .map(|r| r.0.chars().count())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>12}  {:>12}  {:>8}",
            "", self.headers[0], self.headers[1], "Ratio"
        );
        for (row, ratio) in self.rows.iter().zip(self.ratios()) {
            let ratio = ratio
                .map(|r| format!("{r:.2}"))
                .unwrap_or_else(|| "n.a.".into());
            let _ = writeln!(
                out,
                "{:<label_width$}  {:>12}  {:>12}  {:>8}",
                row.0,
                fmt(row.1),
                fmt(row.2),
                ratio
            );
        }
        out
    }
}
