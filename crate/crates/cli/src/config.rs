//! TOML configuration. Every section is optional and every key falls back to
//! its default; command-line flags are applied on top.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use tomosar_core::pipeline::{PipelineConfig, SceneConfig};
use tomosar_core::plane::AdmmOptions;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub plane: PlaneSection,
    pub crlb: CrlbSection,
    pub stats: StatsSection,
    pub doppler: DopplerSection,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneSection {
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Raster width used to place point-cloud pixels.
    pub width: Option<u64>,
    /// Pixel spacing in x and y (m).
    pub spacing: [f64; 2],
}

impl Default for PlaneSection {
    fn default() -> Self {
        let admm = AdmmOptions::default();
        Self {
            rho: admm.rho,
            abs_tol: admm.abs_tol,
            rel_tol: admm.rel_tol,
            max_iter: admm.max_iter,
            width: None,
            spacing: [1.0, 1.0],
        }
    }
}

impl PlaneSection {
    pub fn admm(&self) -> AdmmOptions {
        AdmmOptions {
            rho: self.rho,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrlbSection {
    pub wavelength: f64,
    pub range: f64,
    pub images: usize,
    pub snr_db: f64,
    /// Standard deviation of the baselines (m).
    pub baseline_std: f64,
    /// Baseline aperture (m).
    pub aperture: f64,
}

impl Default for CrlbSection {
    fn default() -> Self {
        Self {
            wavelength: 0.031,
            range: 661_820.0,
            images: 41,
            snr_db: 2.0,
            baseline_std: 99.5,
            aperture: 417.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub area_km2: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DopplerSection {
    /// Azimuth FM rate (Hz/s).
    pub fm_rate: Option<f64>,
    pub allow_extrapolation: bool,
}
