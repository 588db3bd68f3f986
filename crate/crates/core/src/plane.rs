//! Robust ℓ1 plane fitting of point clouds.
//!
//! A plane `ã·x + b̃·y + z + d̃ = 0` (third coefficient fixed to 1) is fitted
//! by minimising `‖A·x − b‖₁` with `A = [x̃ ỹ 1]`, `x = (ã, b̃, d̃)` and
//! `b = −z̃`, using ADMM on the split `A·x − b = z`. Planes close to vertical
//! cannot be represented with the third coefficient pinned to 1.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result, TomoError};

/// Three coordinate columns of equal length (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud3D {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl PointCloud3D {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        crate::error::ensure_len(x.len(), y.len())?;
        crate::error::ensure_len(x.len(), z.len())?;
        ensure(x.iter().chain(&y).chain(&z).all(|v| v.is_finite()), || {
            "point coordinates must be finite".into()
        })?;
        Ok(Self { x, y, z })
    }

    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            points.iter().map(|p| p[0]).collect(),
            points.iter().map(|p| p[1]).collect(),
            points.iter().map(|p| p[2]).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Copy with every height shifted by `dz`.
    pub fn shifted(&self, dz: f64) -> Self {
        Self {
            x: self.x.clone(),
            y: self.y.clone(),
            z: self.z.iter().map(|z| z + dz).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedPlane {
    /// (ã, b̃, d̃).
    pub coefficients: [f64; 3],
    pub iterations: usize,
    /// ‖A·x − b‖₁ at the returned coefficients.
    pub final_residual: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl FittedPlane {
    /// Plane with given coefficients and no solver history.
    pub fn from_coefficients(a: f64, b: f64, d: f64) -> Self {
        Self {
            coefficients: [a, b, d],
            iterations: 0,
            final_residual: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        }
    }

    /// Normal vector (ã, b̃, 1).
    pub fn normal(&self) -> [f64; 3] {
        [self.coefficients[0], self.coefficients[1], 1.0]
    }

    pub fn normal_norm(&self) -> f64 {
        let [a, b, c] = self.normal();
        (a * a + b * b + c * c).sqrt()
    }

    /// Height of the plane at (x, y).
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        -(self.coefficients[0] * x + self.coefficients[1] * y + self.coefficients[2])
    }
}

/// ADMM parameters. `rho` is the augmented-Lagrangian penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub rho: f64,
    /// Absolute tolerance, scaled by √m (primal) and √3 (dual).
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            max_iter: 100_000,
        }
    }
}

/// Elementwise `(w − λ)₊ − (−w − λ)₊`.
pub fn soft_threshold(w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    ensure(lambda >= 0.0 && lambda.is_finite(), || {
        format!("threshold must be non-negative, got {lambda}")
    })?;
    Ok(w.iter().map(|&x| shrink(x, lambda)).collect())
}

#[inline]
fn shrink(x: f64, lambda: f64) -> f64 {
    (x - lambda).max(0.0) - (-x - lambda).max(0.0)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-absolute-deviation plane through the cloud.
pub fn fit_plane_l1(cloud: &PointCloud3D, options: &AdmmOptions) -> Result<FittedPlane> {
    run_admm(cloud, options, None)
}

/// As [`fit_plane_l1`], also recording the ℓ1 loss after every iteration.
pub fn fit_plane_l1_traced(
    cloud: &PointCloud3D,
    options: &AdmmOptions,
) -> (Result<FittedPlane>, Vec<f64>) {
    let mut trace = Vec::new();
    let result = run_admm(cloud, options, Some(&mut trace));
    (result, trace)
}

fn run_admm(
    cloud: &PointCloud3D,
    options: &AdmmOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<FittedPlane> {
    let m = cloud.len();
    ensure(m >= 3, || {
        format!("plane fitting needs at least 3 points, got {m}")
    })?;
    ensure(options.rho.is_finite() && options.rho > 0.0, || {
        format!("ADMM penalty must be positive, got {}", options.rho)
    })?;
    ensure(options.abs_tol > 0.0 && options.rel_tol >= 0.0, || {
        "invalid tolerances".into()
    })?;

    // Centring the planar coordinates changes A only by an invertible
    // column transform, so A·x and every ADMM iterate in data space are
    // unchanged while AᵀA becomes well conditioned.
    let mx = cloud.x.iter().sum::<f64>() / m as f64;
    let my = cloud.y.iter().sum::<f64>() / m as f64;
    let xs: Vec<f64> = cloud.x.iter().map(|x| x - mx).collect();
    let ys: Vec<f64> = cloud.y.iter().map(|y| y - my).collect();
    let b: Vec<f64> = cloud.z.iter().map(|z| -z).collect();

    let mut ata = Matrix3::<f64>::zeros();
    for i in 0..m {
        let row = Vector3::new(xs[i], ys[i], 1.0);
        ata += row * row.transpose();
    }
    let eig = ata.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 1e-12 * hi {
        return Err(TomoError::RankDeficient(
            "points are collinear in the horizontal plane".into(),
        ));
    }
    let factor = ata
        .cholesky()
        .ok_or_else(|| TomoError::RankDeficient("AᵀA is not positive definite".into()))?;

    let apply = |x: &Vector3<f64>, out: &mut [f64]| {
        for i in 0..m {
            out[i] = x[0] * xs[i] + x[1] * ys[i] + x[2];
        }
    };
    let apply_t = |v: &[f64]| -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for i in 0..m {
            acc[0] += xs[i] * v[i];
            acc[1] += ys[i] * v[i];
            acc[2] += v[i];
        }
        acc
    };

    let rho = options.rho;
    let b_norm = norm2(&b);
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut work = vec![0.0; m];
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;

    for iteration in 1..=options.max_iter {
        for i in 0..m {
            work[i] = b[i] + z[i] - y[i] / rho;
        }
        let x = factor.solve(&apply_t(&work));
        apply(&x, &mut ax);

        let mut dz = vec![0.0; m];
        for i in 0..m {
            let znew = shrink(ax[i] - b[i] + y[i] / rho, 1.0 / rho);
            dz[i] = znew - z[i];
            z[i] = znew;
        }
        for i in 0..m {
            let r = ax[i] - b[i] - z[i];
            work[i] = r;
            y[i] += rho * r;
        }
        primal = norm2(&work);
        dual = rho * apply_t(&dz).norm();
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum());
        }

        let eps_primal = (m as f64).sqrt() * options.abs_tol
            + options.rel_tol * norm2(&ax).max(norm2(&z)).max(b_norm);
        let eps_dual = 3f64.sqrt() * options.abs_tol + options.rel_tol * apply_t(&y).norm();
        if primal <= eps_primal && dual <= eps_dual {
            return Ok(finish(x, mx, my, cloud, iteration, primal, dual));
        }
    }
    Err(TomoError::NotConverged {
        iterations: options.max_iter,
        residual: primal.max(dual),
    })
}

fn finish(
    x: Vector3<f64>,
    mx: f64,
    my: f64,
    cloud: &PointCloud3D,
    iterations: usize,
    primal: f64,
    dual: f64,
) -> FittedPlane {
    let mut plane = FittedPlane::from_coefficients(x[0], x[1], x[2] - x[0] * mx - x[1] * my);
    plane.iterations = iterations;
    plane.final_residual = l1_loss(cloud, &plane);
    plane.primal_residual = primal;
    plane.dual_residual = dual;
    plane
}

/// `A·x + z̃` per point: the vertical offset of each point from the plane.
pub fn vertical_residuals(cloud: &PointCloud3D, plane: &FittedPlane) -> Vec<f64> {
    let [a, b, d] = plane.coefficients;
    (0..cloud.len())
        .map(|i| a * cloud.x[i] + b * cloud.y[i] + d + cloud.z[i])
        .collect()
}

/// Signed point-to-plane distances `(A·x + z̃)/‖n‖₂`.
pub fn signed_distances(cloud: &PointCloud3D, plane: &FittedPlane) -> Vec<f64> {
    let norm = plane.normal_norm();
    vertical_residuals(cloud, plane)
        .into_iter()
        .map(|r| r / norm)
        .collect()
}

/// `‖A·x − b‖₁` for the given plane.
pub fn l1_loss(cloud: &PointCloud3D, plane: &FittedPlane) -> f64 {
    vertical_residuals(cloud, plane)
        .iter()
        .map(|r| r.abs())
        .sum()
}
