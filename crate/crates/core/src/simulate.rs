//! Synthetic multibaseline stacks with known ground truth.
//!
//! SNR here is the per-scatterer amplitude against total complex noise power,
//! `A²/E[|w|²]`, referenced to the strongest scatterer of a pixel. The same
//! quantity doubles as the signal-to-clutter ratio annotated on candidate
//! pixels.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{MotionModel, StackGeometry, SteeringKernel};
use crate::C64;

/// A point scatterer used to synthesize measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScatterer {
    /// Elevation (m).
    pub s: f64,
    /// Linear deformation rate (mm/year).
    pub v: f64,
    /// Seasonal amplitude (mm).
    pub a: f64,
    /// Linear amplitude, non-negative.
    pub amplitude: f64,
    /// Reflectivity phase (rad).
    pub phase: f64,
}

impl GroundTruthScatterer {
    /// Unit-amplitude, zero-phase scatterer at elevation `s` with no motion.
    pub fn at_elevation(s: f64) -> Self {
        Self {
            s,
            v: 0.0,
            a: 0.0,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            [self.s, self.v, self.a, self.amplitude, self.phase]
                .iter()
                .all(|x| x.is_finite()),
            || "scatterer parameters must be finite".into(),
        )?;
        ensure(self.amplitude >= 0.0, || {
            format!(
                "scatterer amplitude must be non-negative, got {}",
                self.amplitude
            )
        })
    }

    pub fn reflectivity(&self) -> C64 {
        C64::from_polar(self.amplitude, self.phase)
    }
}

/// Additive noise setting for [`synthesize_pixel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Disabled,
    /// Per-scatterer SNR in dB relative to the strongest scatterer.
    SnrDb(f64),
}

impl NoiseLevel {
    /// Complex noise power E[|w|²] for a pixel containing `scatterers`.
    ///
    /// An empty pixel uses a unit reference amplitude.
    pub fn noise_power(&self, scatterers: &[GroundTruthScatterer]) -> f64 {
        match *self {
            NoiseLevel::Disabled => 0.0,
            NoiseLevel::SnrDb(db) => {
                let reference = scatterers
                    .iter()
                    .map(|s| s.amplitude * s.amplitude)
                    .fold(None, |acc: Option<f64>, p| {
                        Some(acc.map_or(p, |a| a.max(p)))
                    })
                    .unwrap_or(1.0);
                reference / db_to_linear(db)
            }
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Deterministic per-item seed derived from a base seed (SplitMix64 mix).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Effective baselines drawn uniformly from `[−span, span]`, with the middle
/// entry pinned to exactly zero as the master acquisition.
pub fn sample_baselines(count: usize, span: f64, seed: u64) -> Result<Vec<f64>> {
    ensure(count >= 1, || "baseline count must be at least 1".into())?;
    ensure(span.is_finite() && span > 0.0, || {
        format!("baseline span must be positive, got {span}")
    })?;
    let mut rng = rng_from_seed(seed);
    let master = count / 2;
    Ok((0..count)
        .map(|n| {
            if n == master {
                0.0
            } else {
                // Exclude an exact zero so the master stays unique.
                loop {
                    let b = rng.random_range(-span..=span);
                    if b != 0.0 {
                        break b;
                    }
                }
            }
        })
        .collect())
}

/// Geometry with `count` uniformly sampled baselines and a constant repeat
/// interval, master in the middle of the time series.
pub fn sample_geometry(
    count: usize,
    span: f64,
    wavelength: f64,
    master_range: f64,
    interval_days: f64,
    seed: u64,
) -> Result<StackGeometry> {
    let baselines = sample_baselines(count, span, seed)?;
    let temporal = StackGeometry::uniform_temporal_baselines(count, interval_days, count / 2);
    StackGeometry::new(wavelength, master_range, baselines, temporal)
}

/// Noise-free forward model `Σ_k A_k·e^{iφ_k}·r(s_k, v_k, a_k)`.
pub fn forward_model(kernel: &SteeringKernel, scatterers: &[GroundTruthScatterer]) -> DVector<C64> {
    let mut g = DVector::<C64>::zeros(kernel.len());
    for sc in scatterers {
        let gamma = sc.reflectivity();
        for n in 0..kernel.len() {
            g[n] += gamma * kernel.entry(n, sc.s, sc.v, sc.a);
        }
    }
    g
}

/// Adds circular complex white Gaussian noise of power `power`.
pub fn add_noise<R: Rng + ?Sized>(g: &mut DVector<C64>, power: f64, rng: &mut R) {
    if power <= 0.0 {
        return;
    }
    let sigma = (power / 2.0).sqrt();
    for z in g.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += C64::new(sigma * re, sigma * im);
    }
}

/// Synthesizes one pixel's measurement vector.
pub fn synthesize_pixel(
    geometry: &StackGeometry,
    motion: MotionModel,
    scatterers: &[GroundTruthScatterer],
    noise: NoiseLevel,
    seed: u64,
) -> Result<DVector<C64>> {
    if let NoiseLevel::SnrDb(db) = noise {
        ensure(db.is_finite(), || "SNR must be finite".into())?;
    }
    for sc in scatterers {
        sc.validate()?;
    }
    let kernel = geometry.steering(motion);
    let mut g = forward_model(&kernel, scatterers);
    let mut rng = rng_from_seed(seed);
    add_noise(&mut g, noise.noise_power(scatterers), &mut rng);
    Ok(g)
}
