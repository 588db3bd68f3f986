//! Independent optimisers used as reference solutions in tests.

#![allow(dead_code)]

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use tomosar_core::model::Axis;
use tomosar_core::plane::{AdmmOptions, PointCloud3D};
use tomosar_core::simulate::{rng_from_seed, sample_geometry};
use tomosar_core::{build_dictionary, ElevationMotionGrid, TomoDictionary, C64};

fn csc(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, c, x) in entries {
        if x != 0.0 {
            i.push(r);
            j.push(c);
            v.push(x);
        }
    }
    CscMatrix::new_from_triplets(rows, cols, i, j, v)
}

/// Optimal value of `min ‖Rγ − g‖² + ε·Σ|γ_l|` over complex γ, solved as a
/// second-order cone program in the real variables (Re γ, Im γ, t).
pub fn l1_objective_socp(dictionary: &TomoDictionary, g: &DVector<C64>, epsilon: f64) -> f64 {
    let r = dictionary.matrix();
    let (n, l) = (r.nrows(), r.ncols());
    // Real design A = [[Re R, −Im R], [Im R, Re R]] acting on (Re γ, Im γ).
    let a = |row: usize, col: usize| -> f64 {
        let (i, re_part) = if row < n {
            (row, true)
        } else {
            (row - n, false)
        };
        let (j, re_var) = if col < l {
            (col, true)
        } else {
            (col - l, false)
        };
        let z = r[(i, j)];
        match (re_part, re_var) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    };
    let b: Vec<f64> = g
        .iter()
        .map(|z| z.re)
        .chain(g.iter().map(|z| z.im))
        .collect();
    let vars = 3 * l;
    // P = 2·AᵀA (upper triangle), q = −2·Aᵀb on the γ block and ε on t.
    let mut p = Vec::new();
    for c1 in 0..2 * l {
        for c2 in c1..2 * l {
            let v: f64 = (0..2 * n).map(|k| a(k, c1) * a(k, c2)).sum();
            p.push((c1, c2, 2.0 * v));
        }
    }
    let mut q = vec![0.0; vars];
    for (c, qc) in q.iter_mut().enumerate().take(2 * l) {
        *qc = -2.0 * (0..2 * n).map(|k| a(k, c) * b[k]).sum::<f64>();
    }
    for qc in q.iter_mut().skip(2 * l) {
        *qc = epsilon;
    }
    // (t_l, Re γ_l, Im γ_l) ∈ SOC(3): slack s = −A_c·x with A_c = −I.
    let mut cons = Vec::new();
    let mut cones = Vec::new();
    for k in 0..l {
        cons.push((3 * k, 2 * l + k, -1.0));
        cons.push((3 * k + 1, k, -1.0));
        cons.push((3 * k + 2, l + k, -1.0));
        cones.push(SupportedConeT::SecondOrderConeT(3));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(500)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .build()
        .unwrap();
    let p = csc(vars, vars, &p);
    let ac = csc(3 * l, vars, &cons);
    let mut solver = DefaultSolver::new(&p, &q, &ac, &vec![0.0; 3 * l], &cones, settings).unwrap();
    solver.solve();
    assert!(
        matches!(
            solver.solution.status,
            SolverStatus::Solved | SolverStatus::AlmostSolved
        ),
        "oracle status {:?}",
        solver.solution.status
    );
    solver.solution.obj_val + g.norm_squared()
}

/// Optimal value of `min Σ|a·x + b·y + d + z|` as a linear program.
pub fn lad_objective_lp(cloud: &PointCloud3D) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let a = lp.add_var(0.0, free);
    let b = lp.add_var(0.0, free);
    let d = lp.add_var(0.0, free);
    for i in 0..cloud.len() {
        let pos = lp.add_var(1.0, (0.0, f64::INFINITY));
        let neg = lp.add_var(1.0, (0.0, f64::INFINITY));
        lp.add_constraint(
            [
                (a, cloud.x()[i]),
                (b, cloud.y()[i]),
                (d, 1.0),
                (pos, -1.0),
                (neg, 1.0),
            ],
            ComparisonOp::Eq,
            -cloud.z()[i],
        );
    }
    lp.solve().expect("LP oracle").objective()
}

/// Random LASSO problem with N ≤ 15 and L ≤ 25.
pub fn lasso_instance(seed: u64) -> (TomoDictionary, DVector<C64>, f64) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(4..=15);
    let geometry = sample_geometry(n, 250.0, 0.031, 661_820.0, 22.0, seed).unwrap();
    let grid = if seed.is_multiple_of(2) {
        let l = rng.random_range(5..=25);
        ElevationMotionGrid::elevation_only(Axis::linspace(-40.0, 40.0, l).unwrap()).unwrap()
    } else {
        ElevationMotionGrid::new(
            Axis::linspace(-30.0, 30.0, 5).unwrap(),
            Axis::linspace(-5.0, 5.0, 5).unwrap(),
            Axis::fixed_zero(),
        )
        .unwrap()
    };
    let dict = build_dictionary(&geometry, &grid).unwrap();
    let mut g = DVector::<C64>::zeros(n);
    for _ in 0..rng.random_range(1..=3) {
        let col = rng.random_range(0..dict.columns());
        let amp = C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(-3.0..3.0));
        g += dict.matrix().column(col) * amp;
    }
    for z in g.iter_mut() {
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        *z += C64::new(re, im) * 0.2;
    }
    let max_corr = dict
        .matrix()
        .ad_mul(&g)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let epsilon = 2.0 * max_corr * rng.random_range(0.05..0.8);
    (dict, g, epsilon)
}

/// Noisy plane over 500 m × 500 m with a share of gross outliers.
pub fn plane_instance(seed: u64, m: usize, outlier_share: f64) -> PointCloud3D {
    let mut rng = rng_from_seed(1000 + seed);
    let (a, b, d) = (
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-20.0..20.0),
    );
    let points: Vec<[f64; 3]> = (0..m)
        .map(|_| {
            let x = rng.random_range(0.0..500.0);
            let y = rng.random_range(0.0..500.0);
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let mut z = -(a * x + b * y + d) + noise;
            if rng.random_bool(outlier_share) {
                z += rng.random_range(-200.0..200.0);
            }
            [x, y, z]
        })
        .collect();
    PointCloud3D::from_points(&points).unwrap()
}

pub fn tight_admm() -> AdmmOptions {
    AdmmOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_iter: 2_000_000,
        ..AdmmOptions::default()
    }
}
