use nalgebra::{DMatrix, DVector};

use super::{Method, SpectrumEstimate};
use crate::error::{ensure, Result, TomoError};
use crate::model::TomoDictionary;
use crate::C64;

/// How often (in iterations) the duality gap is evaluated.
const CHECK_EVERY: usize = 10;

/// Converged ℓ1 solution with its certificate.
#[derive(Debug, Clone)]
pub struct L1Solution {
    pub estimate: SpectrumEstimate,
    pub iterations: usize,
    pub objective: f64,
    /// Primal objective minus the best dual bound found.
    pub duality_gap: f64,
}

/// `‖Rγ − g‖² + ε·Σ|γ_l|`.
pub fn l1_objective(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    gamma: &DVector<C64>,
    epsilon: f64,
) -> f64 {
    let residual = dictionary.matrix() * gamma - g;
    residual.norm_squared() + epsilon * gamma.iter().map(|z| z.norm()).sum::<f64>()
}

/// Dual objective at the scaled residual `u = 2·s·(g − Rγ)` with s chosen so
/// that `‖Rᴴu‖∞ ≤ ε`. Any such u bounds the optimum from below.
fn dual_bound(
    residual: &DVector<C64>,
    correlation: &DVector<C64>,
    g: &DVector<C64>,
    epsilon: f64,
) -> f64 {
    let max_corr = correlation.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = if max_corr > 0.0 {
        (epsilon / (2.0 * max_corr)).min(1.0)
    } else {
        1.0
    };
    let u = residual * C64::from(2.0 * scale);
    u.dotc(g).re - u.norm_squared() / 4.0
}

/// Complex soft thresholding: shrinks each modulus by `threshold`.
pub fn complex_soft_threshold(z: C64, threshold: f64) -> C64 {
    let m = z.norm();
    if m <= threshold {
        C64::new(0.0, 0.0)
    } else {
        z * ((m - threshold) / m)
    }
}

/// ℓ1-regularised spectrum `argmin ‖Rγ − g‖² + ε‖γ‖₁` over complex γ.
pub fn l1_solve(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SpectrumEstimate> {
    l1_solve_certified(dictionary, g, epsilon, tol, max_iter).map(|s| s.estimate)
}

/// Columns in the first working set.
const INITIAL_WORKING_SET: usize = 24;
/// Fewest KKT violators added per outer round; the working set may at
/// most double otherwise.
const MIN_ADDED: usize = 16;

/// Working-set accelerated proximal gradient.
///
/// FISTA with gradient-based restart runs on the Gram matrix of a small set
/// of columns; columns violating the optimality condition `2|R_lᴴr| ≤ ε` on
/// the full dictionary are then added and the restricted problem re-solved
/// from the previous point. Stops when the duality gap over the full
/// dictionary, relative to the objective, falls below `tol`. `max_iter`
/// bounds the total number of inner iterations.
pub fn l1_solve_certified(
    dictionary: &TomoDictionary,
    g: &DVector<C64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<L1Solution> {
    ensure(epsilon.is_finite() && epsilon > 0.0, || {
        format!("l1 regularization must be positive, got {epsilon}")
    })?;
    ensure(tol.is_finite() && tol > 0.0, || {
        format!("tolerance must be positive, got {tol}")
    })?;
    dictionary.check_measurement(g)?;
    let r = dictionary.matrix();
    let cols = dictionary.columns();

    // Zero is optimal iff 2·max|R_lᴴg| ≤ ε.
    let rhs = r.ad_mul(g);
    let max_corr = rhs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if 2.0 * max_corr <= epsilon {
        return Ok(L1Solution {
            estimate: SpectrumEstimate {
                gamma: DVector::zeros(cols),
                method: Method::L1,
                regularization: epsilon,
            },
            iterations: 0,
            objective: g.norm_squared(),
            duality_gap: 0.0,
        });
    }

    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| rhs[b].norm().total_cmp(&rhs[a].norm()).then(a.cmp(&b)));
    let mut working: Vec<usize> = order[..cols.min(INITIAL_WORKING_SET)].to_vec();
    let mut in_set = vec![false; cols];
    working.iter().for_each(|&l| in_set[l] = true);

    let mut x = DVector::<C64>::zeros(working.len());
    // Restricted solves only need to be accurate relative to the current gap.
    let mut floor = 0.25 * tol;
    let mut outer_gap = 1.0f64;
    let mut iterations = 0;
    let (mut last_gap, mut last_primal);
    loop {
        let sub = r.select_columns(&working);
        let gram = sub.ad_mul(&sub);
        let b = DVector::from_iterator(working.len(), working.iter().map(|&l| rhs[l]));
        let budget = max_iter - iterations;
        let inner_tol = floor.max(0.1 * outer_gap);
        let (used, converged) = fista_gram(&gram, &b, g, &sub, &mut x, epsilon, inner_tol, budget);
        iterations += used;

        let residual = g - &sub * &x;
        let correlation = r.ad_mul(&residual);
        let primal = residual.norm_squared() + epsilon * x.iter().map(|z| z.norm()).sum::<f64>();
        let dual = dual_bound(&residual, &correlation, g, epsilon);
        last_gap = (primal - dual).max(0.0);
        last_primal = primal;
        outer_gap = last_gap / primal.abs().max(f64::MIN_POSITIVE);
        if last_gap <= tol * primal.abs().max(f64::MIN_POSITIVE) {
            let mut gamma = DVector::<C64>::zeros(cols);
            for (k, &l) in working.iter().enumerate() {
                gamma[l] = x[k];
            }
            return Ok(L1Solution {
                estimate: SpectrumEstimate {
                    gamma,
                    method: Method::L1,
                    regularization: epsilon,
                },
                iterations,
                objective: primal,
                duality_gap: last_gap,
            });
        }
        if iterations >= max_iter || !converged {
            break;
        }

        let mut violators: Vec<usize> = (0..cols)
            .filter(|&l| !in_set[l] && 2.0 * correlation[l].norm() > epsilon)
            .collect();
        if violators.is_empty() {
            // The restricted solve was not accurate enough to certify.
            if inner_tol <= floor {
                floor *= 0.1;
                if floor < f64::EPSILON {
                    break;
                }
            }
            continue;
        }
        violators.sort_by(|&a, &b| {
            correlation[b]
                .norm()
                .total_cmp(&correlation[a].norm())
                .then(a.cmp(&b))
        });
        violators.truncate(MIN_ADDED.max(working.len()));
        for &l in &violators {
            in_set[l] = true;
            working.push(l);
        }
        x = x.resize_vertically(working.len(), C64::new(0.0, 0.0));
    }
    Err(TomoError::NotConverged {
        iterations,
        residual: last_gap / last_primal.abs().max(f64::MIN_POSITIVE),
    })
}

/// FISTA on the restricted problem, warm-started at `x`, with the gradient
/// `2(Gx − b)` taken from the Gram matrix `G = SᴴS` and `b = Sᴴg`. Returns
/// the iterations used and whether the restricted relative gap reached
/// `tol` within `max_iter`.
#[allow(clippy::too_many_arguments)]
fn fista_gram(
    gram: &DMatrix<C64>,
    b: &DVector<C64>,
    g: &DVector<C64>,
    sub: &DMatrix<C64>,
    x: &mut DVector<C64>,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> (usize, bool) {
    let lipschitz = 2.0
        * gram
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
    let threshold = epsilon * step;

    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut previous_objective = f64::INFINITY;
    for iteration in 1..=max_iter {
        let grad = (gram * &y - b) * C64::from(2.0);
        let mut x_new = &y - grad * C64::from(step);
        x_new.apply(|z| *z = complex_soft_threshold(*z, threshold));

        // Restart momentum when it points against the proximal step.
        if (&y - &x_new).dotc(&(&x_new - &*x)).re > 0.0 {
            theta = 1.0;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_new;
        y = &x_new + (&x_new - &*x) * C64::from(momentum);
        *x = x_new;
        theta = theta_new;

        if iteration % CHECK_EVERY == 0 {
            let residual = g - sub * &*x;
            let correlation = b - gram * &*x;
            let primal =
                residual.norm_squared() + epsilon * x.iter().map(|z| z.norm()).sum::<f64>();
            let dual = dual_bound(&residual, &correlation, g, epsilon);
            let scale = primal.abs().max(f64::MIN_POSITIVE);
            let change = (previous_objective - primal).abs() / scale;
            previous_objective = primal;
            if (primal - dual).max(0.0) / scale <= tol && change <= tol {
                return (iteration, true);
            }
        }
    }
    (max_iter, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_dictionary, Axis, ElevationMotionGrid, MotionModel};
    use crate::simulate::sample_geometry;
    use approx::assert_relative_eq;

    fn dictionary(n: usize, l: usize) -> TomoDictionary {
        let geometry = sample_geometry(n, 250.0, 0.031, 661_820.0, 22.0, 21).unwrap();
        let grid =
            ElevationMotionGrid::elevation_only(Axis::linspace(-60.0, 60.0, l).unwrap()).unwrap();
        build_dictionary(&geometry, &grid).unwrap()
    }

    #[test]
    fn soft_threshold_shrinks_modulus() {
        let z = complex_soft_threshold(C64::new(3.0, 4.0), 1.0);
        assert_relative_eq!(z.norm(), 4.0, epsilon = 1e-15);
        assert_relative_eq!(z.arg(), C64::new(3.0, 4.0).arg(), epsilon = 1e-15);
        assert_eq!(
            complex_soft_threshold(C64::new(0.3, 0.4), 0.5),
            C64::new(0.0, 0.0)
        );
    }

    #[test]
    fn working_set_certifies_on_a_coherent_motion_grid() {
        use crate::estimators::{EstimatorConfig, PixelProcessor};
        use crate::simulate::{synthesize_pixel, GroundTruthScatterer, NoiseLevel};

        let geometry = sample_geometry(41, 250.0, 0.031, 661_820.0, 22.0, 5).unwrap();
        let dict = build_dictionary(&geometry, &crate::pipeline::default_grid()).unwrap();
        let processor = PixelProcessor::new(dict.clone(), EstimatorConfig::default()).unwrap();
        let truth = [
            GroundTruthScatterer {
                v: 2.0,
                ..GroundTruthScatterer::at_elevation(-12.0)
            },
            GroundTruthScatterer {
                a: -1.5,
                phase: 0.7,
                ..GroundTruthScatterer::at_elevation(17.0)
            },
        ];
        for (seed, snr) in [(1, -3.0), (2, 0.0), (3, 5.0), (4, 10.0), (5, 20.0)] {
            let g = synthesize_pixel(
                &geometry,
                MotionModel::default(),
                &truth,
                NoiseLevel::SnrDb(snr),
                seed,
            )
            .unwrap();
            let epsilon = processor.spectrum(&g, None).unwrap().regularization;
            let solution = l1_solve_certified(&dict, &g, epsilon, 1e-6, 200_000).unwrap();
            assert!(solution.duality_gap <= 1e-6 * solution.objective);
            let objective = l1_objective(&dict, &g, &solution.estimate.gamma, epsilon);
            assert_relative_eq!(objective, solution.objective, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let dict = dictionary(10, 30);
        let est = l1_solve(&dict, &DVector::zeros(10), 0.1, 1e-8, 1000).unwrap();
        assert!(est.gamma.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn epsilon_above_threshold_gives_zero_solution() {
        let dict = dictionary(10, 30);
        let g = dict.matrix().column(4) * C64::new(0.7, 0.2) + dict.matrix().column(20);
        let bound = 2.0
            * dict
                .matrix()
                .ad_mul(&g)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
        let at = l1_solve(&dict, &g, bound, 1e-8, 1000).unwrap();
        assert!(at.gamma.iter().all(|z| z.norm() == 0.0));
        // Just below the threshold the solution is no longer zero.
        let below = l1_solve_certified(&dict, &g, 0.98 * bound, 1e-9, 50_000).unwrap();
        assert!(below.estimate.gamma.iter().any(|z| z.norm() > 0.0));
        assert!(below.objective < g.norm_squared());
    }

    #[test]
    fn certificate_bounds_the_objective() {
        let dict = dictionary(12, 40);
        let g = dict.matrix().column(10) + dict.matrix().column(30) * C64::new(0.0, 0.8);
        let sol = l1_solve_certified(&dict, &g, 0.5, 1e-10, 200_000).unwrap();
        assert!(sol.duality_gap <= 1e-10 * sol.objective);
        assert_relative_eq!(
            sol.objective,
            l1_objective(&dict, &g, &sol.estimate.gamma, 0.5),
            max_relative = 1e-12
        );
    }

    #[test]
    fn non_convergence_is_reported() {
        let dict = dictionary(12, 80);
        let g = dict.matrix().column(10) + dict.matrix().column(13);
        match l1_solve(&dict, &g, 0.01, 1e-14, 20) {
            Err(TomoError::NotConverged {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 20);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let dict = dictionary(6, 10);
        assert!(l1_solve(&dict, &DVector::zeros(6), 0.0, 1e-6, 10).is_err());
        assert!(l1_solve(&dict, &DVector::zeros(5), 1.0, 1e-6, 10).is_err());
    }
}
