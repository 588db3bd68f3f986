use nalgebra::DVector;

use super::{Method, SpectrumEstimate};
use crate::error::{ensure, Result};
use crate::model::TomoDictionary;
use crate::C64;

/// Minimiser of `‖Rγ − g‖² + δ‖γ‖²`, i.e. `γ = (RᴴR + δI)⁻¹Rᴴg`.
///
/// Solved through the cached eigendecomposition of the smaller Gram matrix.
/// When N < L the push-through identity `(RᴴR + δI)⁻¹Rᴴ = Rᴴ(RRᴴ + δI)⁻¹`
/// keeps the work at N×N.
pub fn tikhonov_solve(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    delta: f64,
) -> Result<SpectrumEstimate> {
    ensure(delta.is_finite() && delta > 0.0, || {
        format!("Tikhonov regularization must be positive, got {delta}")
    })?;
    dictionary.check_measurement(g)?;
    let r = dictionary.matrix();
    let gram = dictionary.gram();
    let u = &gram.eigenvectors;
    let shrink = |x: DVector<C64>| -> DVector<C64> {
        let mut coeffs = u.ad_mul(&x);
        for (c, &lambda) in coeffs.iter_mut().zip(gram.eigenvalues.iter()) {
            *c /= lambda + delta;
        }
        u * coeffs
    };
    let gamma = if gram.row_side {
        r.ad_mul(&shrink(g.clone()))
    } else {
        shrink(r.ad_mul(g))
    };
    Ok(SpectrumEstimate {
        gamma,
        method: Method::Tikhonov,
        regularization: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dictionary, Axis, ElevationMotionGrid, StackGeometry};
    use crate::simulate::sample_geometry;
    use approx::assert_relative_eq;

    fn gradient_norm(
        dict: &TomoDictionary,
        g: &DVector<C64>,
        gamma: &DVector<C64>,
        delta: f64,
    ) -> f64 {
        let r = dict.matrix();
        let grad = (r.ad_mul(&(r * gamma - g)) + gamma * C64::from(delta)) * C64::from(2.0);
        grad.norm()
    }

    #[test]
    fn zero_data_gives_zero_spectrum() {
        let geometry = sample_geometry(12, 250.0, 0.031, 661_820.0, 22.0, 1).unwrap();
        let grid =
            ElevationMotionGrid::elevation_only(Axis::linspace(-30.0, 30.0, 31).unwrap()).unwrap();
        let dict = build_dictionary(&geometry, &grid).unwrap();
        let est = tikhonov_solve(&dict, &DVector::zeros(12), 0.5).unwrap();
        assert!(est.gamma.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        // L = 1, all-ones column, g = 1: γ = N/(N + δ).
        let geometry = StackGeometry::new(
            0.031,
            6e5,
            vec![0.0, 40.0, -80.0, 120.0],
            vec![0.0; 4]
                .into_iter()
                .enumerate()
                .map(|(i, _)| i as f64 * 0.1)
                .collect(),
        )
        .unwrap();
        let grid = ElevationMotionGrid::elevation_only(Axis::new(vec![0.0]).unwrap()).unwrap();
        let dict = build_dictionary(&geometry, &grid).unwrap();
        let g = DVector::from_element(4, C64::new(1.0, 0.0));
        let est = tikhonov_solve(&dict, &g, 1.0).unwrap();
        assert_relative_eq!(est.gamma[0].re, 4.0 / 5.0, epsilon = 1e-13);
        assert_relative_eq!(est.gamma[0].im, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn noise_free_column_peaks_at_its_index() {
        let geometry = sample_geometry(20, 250.0, 0.031, 661_820.0, 22.0, 4).unwrap();
        let grid =
            ElevationMotionGrid::elevation_only(Axis::linspace(-95.0, 95.0, 20).unwrap()).unwrap();
        let dict = build_dictionary(&geometry, &grid).unwrap();
        for k in [0usize, 7, 13, 19] {
            let g = dict.matrix().column(k).into_owned();
            let est = tikhonov_solve(&dict, &g, 1e-6).unwrap();
            let argmax = (0..20)
                .max_by(|&a, &b| est.gamma[a].norm().total_cmp(&est.gamma[b].norm()))
                .unwrap();
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn gradient_vanishes_on_both_solve_routes() {
        let geometry = sample_geometry(15, 250.0, 0.031, 661_820.0, 22.0, 8).unwrap();
        let g = crate::simulate::synthesize_pixel(
            &geometry,
            Default::default(),
            &[crate::simulate::GroundTruthScatterer::at_elevation(3.3)],
            crate::simulate::NoiseLevel::SnrDb(3.0),
            2,
        )
        .unwrap();
        // L > N (row side) and L < N (column side).
        for count in [60usize, 9] {
            let grid =
                ElevationMotionGrid::elevation_only(Axis::linspace(-40.0, 40.0, count).unwrap())
                    .unwrap();
            let dict = build_dictionary(&geometry, &grid).unwrap();
            for delta in [1e-3, 0.4, 25.0] {
                let est = tikhonov_solve(&dict, &g, delta).unwrap();
                let scale = dict.matrix().ad_mul(&g).norm();
                assert!(gradient_norm(&dict, &g, &est.gamma, delta) <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let geometry = sample_geometry(5, 250.0, 0.031, 661_820.0, 22.0, 1).unwrap();
        let grid =
            ElevationMotionGrid::elevation_only(Axis::linspace(-5.0, 5.0, 3).unwrap()).unwrap();
        let dict = build_dictionary(&geometry, &grid).unwrap();
        assert!(tikhonov_solve(&dict, &DVector::zeros(5), 0.0).is_err());
        assert!(tikhonov_solve(&dict, &DVector::zeros(5), -1.0).is_err());
        assert!(tikhonov_solve(&dict, &DVector::zeros(4), 1.0).is_err());
    }
}
