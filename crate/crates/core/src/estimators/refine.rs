//! Off-grid correction on the oversampled matched-filter surface.

use nalgebra::DVector;

use super::selection::least_squares;
use super::ScattererEstimate;
use crate::error::{ensure, Result};
use crate::model::{Axis, ElevationMotionGrid, SteeringKernel};
use crate::C64;

/// Refined estimate; `truncated` marks a neighbourhood clipped at the grid
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub estimate: ScattererEstimate,
    pub truncated: bool,
}

/// Samples spanning one coarse cell either side of index `i` at `factor`×
/// density.
fn local_samples(axis: &Axis, i: usize, factor: usize) -> (Vec<f64>, bool) {
    let x = axis.samples()[i];
    if axis.len() == 1 {
        return (vec![x], false);
    }
    let (below, above) = axis.neighbour_steps(i);
    let mut samples = Vec::with_capacity(2 * factor + 1);
    if let Some(step) = below {
        samples.extend(
            (1..=factor)
                .rev()
                .map(|k| x - step * k as f64 / factor as f64),
        );
    }
    samples.push(x);
    if let Some(step) = above {
        samples.extend((1..=factor).map(|k| x + step * k as f64 / factor as f64));
    }
    (samples, below.is_none() || above.is_none())
}

/// Local argmax of `|r(s, v, a)ᴴ·g_residual|` around a coarse grid estimate.
///
/// `g_residual` should already exclude the other scatterers of the pixel.
/// The returned amplitude and phase are the single-column least-squares fit
/// at the refined position.
pub fn offgrid_refine(
    kernel: &SteeringKernel,
    grid: &ElevationMotionGrid,
    g_residual: &DVector<C64>,
    coarse: &ScattererEstimate,
    factor: usize,
) -> Result<Refinement> {
    projected_refine(kernel, grid, g_residual, None, coarse, factor)
}

/// Same search with an optional unit-norm column `other` projected out of
/// both the data and the candidate steering vectors, which makes the score
/// the least-squares fit gain of the candidate given the other scatterer.
fn projected_refine(
    kernel: &SteeringKernel,
    grid: &ElevationMotionGrid,
    g: &DVector<C64>,
    other: Option<&DVector<C64>>,
    coarse: &ScattererEstimate,
    factor: usize,
) -> Result<Refinement> {
    ensure(factor >= 2, || {
        format!("oversampling factor must be at least 2, got {factor}")
    })?;
    ensure(coarse.column < grid.len(), || {
        format!("coarse column {} outside the grid", coarse.column)
    })?;
    let on_grid = grid.point(coarse.column);
    ensure(
        on_grid.s == coarse.s && on_grid.v == coarse.v && on_grid.a == coarse.a,
        || "coarse estimate does not lie on its grid column".into(),
    )?;
    crate::error::ensure_len(kernel.len(), g.len())?;

    let (i_s, i_v, i_a) = grid.axis_indices(coarse.column);
    let (s_samples, ts) = local_samples(grid.s_axis(), i_s, factor);
    let (v_samples, tv) = local_samples(grid.v_axis(), i_v, factor);
    let (a_samples, ta) = local_samples(grid.a_axis(), i_a, factor);

    let n = kernel.len();
    let target = match other {
        Some(q) => g - q * q.dotc(g),
        None => g.clone(),
    };
    // Phase is additive over s, v and a, so the steering vector factorises.
    let phasors = |f: &dyn Fn(usize) -> C64| -> Vec<C64> { (0..n).map(f).collect() };
    let s_phasors: Vec<Vec<C64>> = s_samples
        .iter()
        .map(|&s| phasors(&|k| kernel.entry(k, s, 0.0, 0.0)))
        .collect();

    let zero = C64::new(0.0, 0.0);
    let mut best = (
        f64::NEG_INFINITY,
        on_grid.s,
        on_grid.v,
        on_grid.a,
        zero,
        n as f64,
    );
    let mut weighted = vec![zero; n];
    let mut weighted_other = vec![zero; n];
    for &a in &a_samples {
        let a_ph = phasors(&|k| kernel.entry(k, 0.0, 0.0, a));
        for &v in &v_samples {
            for k in 0..n {
                let va = (kernel.entry(k, 0.0, v, 0.0) * a_ph[k]).conj();
                weighted[k] = target[k] * va;
                if let Some(q) = other {
                    weighted_other[k] = q[k] * va;
                }
            }
            for (&s, s_ph) in s_samples.iter().zip(&s_phasors) {
                let corr: C64 = s_ph.iter().zip(&weighted).map(|(p, w)| p.conj() * w).sum();
                let energy = match other {
                    Some(_) => {
                        let c: C64 = s_ph
                            .iter()
                            .zip(&weighted_other)
                            .map(|(p, w)| p.conj() * w)
                            .sum();
                        (n as f64 - c.norm_sqr()).max(f64::MIN_POSITIVE)
                    }
                    None => n as f64,
                };
                let score = corr.norm_sqr() / energy;
                if score > best.0 {
                    best = (score, s, v, a, corr, energy);
                }
            }
        }
    }
    let (_, s, v, a, corr, energy) = best;
    let coef = corr / energy;
    Ok(Refinement {
        estimate: ScattererEstimate {
            s,
            v,
            a,
            amplitude: coef.norm(),
            phase: coef.arg(),
            ..*coarse
        },
        truncated: ts || tv || ta,
    })
}

/// Refines all scatterers of a pixel by cyclic coordinate search: each one is
/// moved to the best local position given the others, for at most `sweeps`
/// passes.
/// Amplitudes and phases come from a final joint least-squares fit at the
/// refined positions.
pub fn refine_scatterers(
    kernel: &SteeringKernel,
    grid: &ElevationMotionGrid,
    g: &DVector<C64>,
    coarse: &[ScattererEstimate],
    factor: usize,
    sweeps: usize,
) -> Result<(Vec<ScattererEstimate>, bool)> {
    ensure(coarse.len() <= 2, || {
        format!("at most two scatterers per pixel, got {}", coarse.len())
    })?;
    let mut current: Vec<ScattererEstimate> = coarse.to_vec();
    let mut truncated = false;
    let steering = |e: &ScattererEstimate| kernel.vector(e.s, e.v, e.a);
    let passes = if coarse.len() > 1 { sweeps.max(1) } else { 1 };
    for _ in 0..passes {
        let before = current.clone();
        for i in 0..current.len() {
            let other = (current.len() == 2).then(|| steering(&current[1 - i]).normalize());
            let refined = projected_refine(kernel, grid, g, other.as_ref(), &coarse[i], factor)?;
            truncated |= refined.truncated;
            current[i] = refined.estimate;
        }
        if before
            .iter()
            .zip(&current)
            .all(|(p, q)| (p.s, p.v, p.a) == (q.s, q.v, q.a))
        {
            break;
        }
    }
    let columns: Vec<DVector<C64>> = current.iter().map(steering).collect();
    if let Some((coeffs, _)) = least_squares(&columns, g) {
        for (e, c) in current.iter_mut().zip(coeffs) {
            e.amplitude = c.norm();
            e.phase = c.arg();
        }
    }
    Ok((current, truncated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MotionModel;
    use crate::simulate::{forward_model, sample_geometry, GroundTruthScatterer};

    fn setup() -> (SteeringKernel, ElevationMotionGrid) {
        let geometry = sample_geometry(41, 250.0, 0.031, 661_820.0, 22.0, 5).unwrap();
        let grid = ElevationMotionGrid::new(
            Axis::linspace(-40.0, 40.0, 41).unwrap(),
            Axis::linspace(-4.0, 4.0, 5).unwrap(),
            Axis::fixed_zero(),
        )
        .unwrap();
        (geometry.steering(MotionModel::default()), grid)
    }

    fn coarse_at(grid: &ElevationMotionGrid, column: usize) -> ScattererEstimate {
        let p = grid.point(column);
        ScattererEstimate {
            s: p.s,
            v: p.v,
            a: p.a,
            amplitude: 1.0,
            phase: 0.0,
            coherence: 0.0,
            column,
        }
    }

    #[test]
    fn on_grid_scatterer_is_a_fixed_point() {
        let (kernel, grid) = setup();
        let column = grid.column_index(23, 3, 0);
        let p = grid.point(column);
        let g = forward_model(
            &kernel,
            &[GroundTruthScatterer {
                s: p.s,
                v: p.v,
                a: p.a,
                amplitude: 2.0,
                phase: 0.4,
            }],
        );
        let out = offgrid_refine(&kernel, &grid, &g, &coarse_at(&grid, column), 10).unwrap();
        assert_eq!(
            (out.estimate.s, out.estimate.v, out.estimate.a),
            (p.s, p.v, p.a)
        );
        assert!((out.estimate.amplitude - 2.0).abs() < 1e-12);
        assert!((out.estimate.phase - 0.4).abs() < 1e-12);
        assert!(!out.truncated);
    }

    #[test]
    fn off_grid_elevation_is_recovered_to_fine_spacing() {
        let (kernel, grid) = setup();
        let step = 2.0;
        let column = grid.column_index(20, 2, 0);
        let s_true = grid.point(column).s + 0.35 * step;
        let g = forward_model(&kernel, &[GroundTruthScatterer::at_elevation(s_true)]);
        let out = offgrid_refine(&kernel, &grid, &g, &coarse_at(&grid, column), 10).unwrap();
        assert!(
            (out.estimate.s - s_true).abs() <= step / 20.0 + 1e-9,
            "s = {}",
            out.estimate.s
        );
        assert!(out.estimate.s - grid.point(column).s <= step);
    }

    #[test]
    fn boundary_neighbourhood_is_truncated() {
        let (kernel, grid) = setup();
        let column = grid.column_index(0, 2, 0);
        let g = forward_model(&kernel, &[GroundTruthScatterer::at_elevation(-40.0)]);
        let out = offgrid_refine(&kernel, &grid, &g, &coarse_at(&grid, column), 4).unwrap();
        assert!(out.truncated);
        assert!(out.estimate.s >= -40.0);
    }

    #[test]
    fn factor_one_and_off_grid_coarse_are_rejected() {
        let (kernel, grid) = setup();
        let g = DVector::zeros(41);
        assert!(offgrid_refine(&kernel, &grid, &g, &coarse_at(&grid, 3), 1).is_err());
        let mut off = coarse_at(&grid, 3);
        off.s += 0.1;
        assert!(offgrid_refine(&kernel, &grid, &g, &off, 10).is_err());
    }

    #[test]
    fn sequential_refinement_separates_a_pair() {
        let (kernel, grid) = setup();
        let truth = [
            GroundTruthScatterer::at_elevation(-10.6),
            GroundTruthScatterer::at_elevation(9.3),
        ];
        let g = forward_model(&kernel, &truth);
        let coarse = [
            coarse_at(&grid, grid.column_index(15, 2, 0)),
            coarse_at(&grid, grid.column_index(25, 2, 0)),
        ];
        let (refined, _) = refine_scatterers(&kernel, &grid, &g, &coarse, 10, 8).unwrap();
        assert!((refined[0].s + 10.6).abs() < 0.11);
        assert!((refined[1].s - 9.3).abs() < 0.11);
        for e in &refined {
            assert!((e.amplitude - 1.0).abs() < 0.05);
            // Within one coarse cell of the starting point.
        }
        assert!(
            (refined[0].s - coarse[0].s).abs() <= 2.0 && (refined[1].s - coarse[1].s).abs() <= 2.0
        );
    }
}
