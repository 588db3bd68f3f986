//! Per-pixel inversion: spectrum estimation, model-order selection, off-grid
//! correction and coherence-based outlier rejection.

mod coherence;
mod l1;
mod refine;
mod selection;
mod tikhonov;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::TomoDictionary;
use crate::C64;

pub use coherence::{ensemble_coherence, reconstruct, reject_outliers, spectrum_coherence};
pub use l1::{complex_soft_threshold, l1_objective, l1_solve, l1_solve_certified, L1Solution};
pub use refine::{offgrid_refine, refine_scatterers, Refinement};
pub use selection::{
    build_hypotheses, calibrate_penalty, double_thresholds, false_positive_rate, least_squares,
    select_model, spectrum_peaks, training_pixel, CalibrationSetup, Hypothesis, HypothesisSet,
    ModelPenalty, ModelSelector, MAX_SCATTERERS,
};
pub use tikhonov::tikhonov_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tikhonov,
    L1,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tikhonov" => Ok(Method::Tikhonov),
            "l1" => Ok(Method::L1),
            other => Err(format!(
                "unknown solver `{other}` (expected tikhonov or l1)"
            )),
        }
    }
}

/// Discrete elevation-motion reflectivity spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub gamma: DVector<C64>,
    pub method: Method,
    /// δ for Tikhonov, ε for ℓ1.
    pub regularization: f64,
}

/// A reconstructed point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererEstimate {
    /// Elevation (m).
    pub s: f64,
    /// Linear deformation rate (mm/year).
    pub v: f64,
    /// Seasonal amplitude (mm).
    pub a: f64,
    pub amplitude: f64,
    /// Reflectivity phase (rad).
    pub phase: f64,
    /// |η| of the pixel model this scatterer belongs to.
    pub coherence: f64,
    /// Coarse grid column the estimate was detected on.
    pub column: usize,
}

/// Outcome of inverting one pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelResult {
    /// Number of scatterers chosen by model selection (0, 1 or 2).
    pub selected_model: usize,
    pub estimates: Vec<ScattererEstimate>,
    /// Parallel to `estimates`; set by [`reject_outliers`].
    pub rejected: Vec<bool>,
    /// |η| of the full pixel model (0 for an empty pixel).
    pub coherence: f64,
    /// Off-grid neighbourhood was clipped at the grid boundary.
    pub truncated: bool,
}

impl PixelResult {
    pub fn from_estimates(selected_model: usize, estimates: Vec<ScattererEstimate>) -> Self {
        let rejected = vec![false; estimates.len()];
        Self {
            selected_model,
            estimates,
            rejected,
            coherence: 0.0,
            truncated: false,
        }
    }

    pub fn empty() -> Self {
        Self::from_estimates(0, Vec::new())
    }

    /// Estimates that passed outlier rejection.
    pub fn survivors(&self) -> impl Iterator<Item = &ScattererEstimate> {
        self.estimates
            .iter()
            .zip(&self.rejected)
            .filter(|(_, &r)| !r)
            .map(|(e, _)| e)
    }

    pub fn surviving_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| !r).count()
    }
}

/// Settings of the per-pixel chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub solver: Method,
    /// Tikhonov δ; defaults to the noise variance.
    pub delta: Option<f64>,
    /// ℓ1 ε; defaults to the universal threshold for this objective.
    pub epsilon: Option<f64>,
    /// Known complex noise power; estimated per pixel when absent.
    pub noise_power: Option<f64>,
    pub max_scatterers: usize,
    pub penalty: ModelPenalty,
    pub polish_supports: bool,
    pub oversample_factor: usize,
    pub refine_sweeps: usize,
    pub coherence_threshold: f64,
    pub l1_tol: f64,
    pub l1_max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            solver: Method::L1,
            delta: None,
            epsilon: None,
            noise_power: None,
            max_scatterers: 2,
            // Four real parameters per scatterer, BIC style; replace with a
            // calibrated value for production runs.
            penalty: ModelPenalty { coefficient: 4.0 },
            polish_supports: true,
            oversample_factor: 10,
            refine_sweeps: 8,
            coherence_threshold: 0.6,
            l1_tol: 1e-4,
            l1_max_iter: 20_000,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure((1..=MAX_SCATTERERS).contains(&self.max_scatterers), || {
            format!("max scatterers must be 1 or 2, got {}", self.max_scatterers)
        })?;
        ensure(self.oversample_factor >= 2, || {
            format!(
                "oversampling factor must be at least 2, got {}",
                self.oversample_factor
            )
        })?;
        ensure((0.0..=1.0).contains(&self.coherence_threshold), || {
            format!(
                "coherence threshold must lie in [0, 1], got {}",
                self.coherence_threshold
            )
        })?;
        for (name, value) in [
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("noise power", self.noise_power),
        ] {
            if let Some(x) = value {
                ensure(x.is_finite() && x > 0.0, || {
                    format!("{name} must be positive, got {x}")
                })?;
            }
        }
        ensure(self.l1_tol > 0.0 && self.l1_max_iter > 0, || {
            "invalid l1 stopping rule".into()
        })?;
        ModelPenalty::new(self.penalty.coefficient).map(|_| ())
    }
}

/// Runs the full inversion chain on pixels sharing one dictionary.
#[derive(Debug, Clone)]
pub struct PixelProcessor {
    dictionary: TomoDictionary,
    config: EstimatorConfig,
}

impl PixelProcessor {
    pub fn new(dictionary: TomoDictionary, config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { dictionary, config })
    }

    pub fn dictionary(&self) -> &TomoDictionary {
        &self.dictionary
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn set_penalty(&mut self, penalty: ModelPenalty) {
        self.config.penalty = penalty;
    }

    pub fn selector(&self) -> ModelSelector {
        ModelSelector {
            penalty: self.config.penalty,
            max_scatterers: self.config.max_scatterers,
            polish_supports: self.config.polish_supports,
        }
    }

    /// Selector allowing two scatterers regardless of the configured cap.
    pub(crate) fn selector_with_two(&self) -> ModelSelector {
        ModelSelector {
            max_scatterers: 2,
            ..self.selector()
        }
    }

    /// Noise power: configured value, else caller hint, else the residual of
    /// the best single-column fit spread over N − 1 degrees of freedom.
    pub fn noise_power(&self, g: &DVector<C64>, hint: Option<f64>) -> f64 {
        if let Some(p) = self.config.noise_power.or(hint) {
            return p;
        }
        let n = g.len() as f64;
        let energy = g.norm_squared();
        let best = self
            .dictionary
            .matrix()
            .ad_mul(g)
            .iter()
            .map(|z| z.norm_sqr())
            .fold(0.0, f64::max)
            / n;
        // Estimated SNR is capped at 40 dB.
        let floor = (1e-4 * energy / n).max(1e-12);
        ((energy - best) / (n - 1.0).max(1.0)).max(floor)
    }

    /// Regularisation constant used for a given noise power.
    pub fn regularization(&self, noise_power: f64) -> f64 {
        match self.config.solver {
            Method::Tikhonov => self.config.delta.unwrap_or(noise_power),
            Method::L1 => self.config.epsilon.unwrap_or_else(|| {
                let n = self.dictionary.rows() as f64;
                let l = self.dictionary.columns().max(2) as f64;
                2.0 * (noise_power * n * l.ln()).sqrt()
            }),
        }
    }

    pub fn spectrum(&self, g: &DVector<C64>, noise_power: Option<f64>) -> Result<SpectrumEstimate> {
        let power = self.noise_power(g, noise_power);
        let reg = self.regularization(power);
        match self.config.solver {
            Method::Tikhonov => tikhonov_solve(&self.dictionary, g, reg),
            Method::L1 => l1_solve(
                &self.dictionary,
                g,
                reg,
                self.config.l1_tol,
                self.config.l1_max_iter,
            ),
        }
    }

    /// Spectrum estimation, model selection, off-grid refinement, coherence
    /// and outlier rejection for one measurement vector.
    pub fn process(&self, g: &DVector<C64>, noise_power: Option<f64>) -> Result<PixelResult> {
        let spectrum = self
            .spectrum(g, noise_power)
            .map_err(|e| e.at_stage("spectrum"))?;
        let mut result = select_model(&self.dictionary, g, &spectrum, &self.selector())
            .map_err(|e| e.at_stage("selection"))?;
        if result.selected_model > 0 {
            let kernel = self.dictionary.kernel();
            let (refined, truncated) = refine_scatterers(
                &kernel,
                self.dictionary.grid(),
                g,
                &result.estimates,
                self.config.oversample_factor,
                self.config.refine_sweeps,
            )
            .map_err(|e| e.at_stage("refinement"))?;
            let model = reconstruct(&kernel, &refined);
            let eta = ensemble_coherence(&model, g).map_err(|e| e.at_stage("coherence"))?;
            let magnitude = eta.norm().min(1.0);
            result.estimates = refined;
            for e in &mut result.estimates {
                e.coherence = magnitude;
            }
            result.coherence = magnitude;
            result.truncated = truncated;
        }
        reject_outliers(result, self.config.coherence_threshold)
            .map_err(|e| e.at_stage("rejection"))
    }
}
