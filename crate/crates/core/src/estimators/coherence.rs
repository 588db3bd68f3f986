use nalgebra::DVector;

use super::{PixelResult, ScattererEstimate};
use crate::error::{ensure, ensure_len, Result};
use crate::model::{SteeringKernel, TomoDictionary};
use crate::C64;

fn unit_phasor(z: C64) -> C64 {
    let m = z.norm();
    // Zero has phase 0 by convention.
    if m == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        z / m
    }
}

/// Ensemble coherence `η = (1/N)·Σ exp(−i(∠m_n − ∠g_n))` between a
/// reconstructed model `m = Rγ` and the measurement `g`.
///
/// Where `m_n` (or `g_n`) is exactly zero its phase is taken as 0.
pub fn ensemble_coherence(model: &DVector<C64>, g: &DVector<C64>) -> Result<C64> {
    ensure_len(model.len(), g.len())?;
    ensure(!g.is_empty(), || "coherence of an empty measurement".into())?;
    let sum: C64 = model
        .iter()
        .zip(g.iter())
        .map(|(m, y)| unit_phasor(*m).conj() * unit_phasor(*y))
        .sum();
    Ok(sum / g.len() as f64)
}

/// Coherence of a spectrum `γ` on the dictionary grid.
pub fn spectrum_coherence(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    gamma: &DVector<C64>,
) -> Result<C64> {
    ensure_len(dictionary.columns(), gamma.len())?;
    ensure_len(dictionary.rows(), g.len())?;
    ensemble_coherence(&(dictionary.matrix() * gamma), g)
}

/// Model vector of off-grid scatterer estimates.
pub fn reconstruct(kernel: &SteeringKernel, estimates: &[ScattererEstimate]) -> DVector<C64> {
    let mut model = DVector::<C64>::zeros(kernel.len());
    for e in estimates {
        let gamma = C64::from_polar(e.amplitude, e.phase);
        for n in 0..kernel.len() {
            model[n] += gamma * kernel.entry(n, e.s, e.v, e.a);
        }
    }
    model
}

/// Marks estimates whose |η| falls below `threshold` as rejected.
pub fn reject_outliers(mut result: PixelResult, threshold: f64) -> Result<PixelResult> {
    ensure((0.0..=1.0).contains(&threshold), || {
        format!("coherence threshold must lie in [0, 1], got {threshold}")
    })?;
    for (e, rejected) in result.estimates.iter().zip(result.rejected.iter_mut()) {
        *rejected = e.coherence < threshold;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn estimate(coherence: f64) -> ScattererEstimate {
        ScattererEstimate {
            s: 0.0,
            v: 0.0,
            a: 0.0,
            amplitude: 1.0,
            phase: 0.0,
            coherence,
            column: 0,
        }
    }

    #[test]
    fn perfect_fit_has_unit_coherence() {
        let g = DVector::from_vec(vec![
            C64::new(1.0, 2.0),
            C64::new(-0.5, 0.1),
            C64::new(0.0, -3.0),
        ]);
        let model = g.map(|z| z * 2.5);
        let eta = ensemble_coherence(&model, &g).unwrap();
        assert_relative_eq!(eta.re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(eta.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn opposite_phase_single_acquisition() {
        let g = DVector::from_vec(vec![C64::new(1.0, 0.0)]);
        let model = DVector::from_vec(vec![C64::new(-1.0, 0.0)]);
        let eta = ensemble_coherence(&model, &g).unwrap();
        assert_relative_eq!(eta.re, -1.0, epsilon = 1e-15);
        assert_relative_eq!(eta.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_model_entry_uses_zero_phase() {
        let g = DVector::from_vec(vec![C64::new(0.0, 1.0), C64::new(1.0, 0.0)]);
        let model = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let eta = ensemble_coherence(&model, &g).unwrap();
        assert_relative_eq!(eta.re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(eta.im, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn random_phases_follow_the_rayleigh_mean() {
        let n = 41;
        let trials = 10_000;
        let mut rng = crate::simulate::rng_from_seed(77);
        let g = DVector::from_element(n, C64::new(1.0, 0.0));
        let mut total = 0.0;
        for _ in 0..trials {
            let model = DVector::from_fn(n, |_, _| {
                C64::from_polar(
                    1.0,
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            });
            total += ensemble_coherence(&model, &g).unwrap().norm();
        }
        let mean = total / trials as f64;
        let expected = std::f64::consts::PI.sqrt() / (2.0 * (n as f64).sqrt());
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean |eta| = {mean}"
        );
    }

    #[test]
    fn rejection_thresholds() {
        let result = PixelResult::from_estimates(2, vec![estimate(0.95), estimate(0.4)]);
        let kept = reject_outliers(result.clone(), 0.0).unwrap();
        assert_eq!(kept.rejected, vec![false, false]);
        let tight = reject_outliers(result.clone(), 1.0).unwrap();
        assert_eq!(tight.rejected, vec![true, true]);
        let mid = reject_outliers(result.clone(), 0.6).unwrap();
        assert_eq!(mid.rejected, vec![false, true]);
        assert_eq!(mid.survivors().count(), 1);
        assert!(reject_outliers(result, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn coherence_is_bounded_and_unit_iff_constant_offset(
            phases in prop::collection::vec(-3.0f64..3.0, 1..30),
            offset in -3.0f64..3.0,
            bump in 0.05f64..1.0,
        ) {
            let g = DVector::from_iterator(phases.len(), phases.iter().map(|&p| C64::from_polar(1.3, p)));
            let shifted = g.map(|z| z * C64::from_polar(0.7, offset));
            let eta = ensemble_coherence(&shifted, &g).unwrap();
            prop_assert!((eta.norm() - 1.0).abs() < 1e-12);
            if phases.len() > 1 {
                let mut bent = shifted.clone();
                bent[0] *= C64::from_polar(1.0, bump);
                prop_assert!(ensemble_coherence(&bent, &g).unwrap().norm() < 1.0 - 1e-6);
            }
        }
    }
}
