//! Acquisition geometry, the elevation-motion parameter grid and the
//! steering dictionary that maps a reflectivity spectrum onto the
//! interferometric measurements of one pixel.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_len, Result, TomoError};
use crate::C64;

/// Default ceiling for the dense dictionary allocation (1 GiB).
pub const DEFAULT_MEMORY_BUDGET: u128 = 1 << 30;

/// Seasonal part of the displacement model.
///
/// The deformation of a scatterer is `v·t + a·(sin(2πt/P + φ) − sin φ)`. The
/// `sin φ` term keeps the master acquisition (t = 0) at zero displacement for
/// any phase offset φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    /// Period of the seasonal term in years.
    pub period: f64,
    /// Phase offset of the seasonal sinusoid in radians.
    #[serde(default)]
    pub phase_offset: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            period: 1.0,
            phase_offset: 0.0,
        }
    }
}

impl MotionModel {
    pub fn new(period: f64, phase_offset: f64) -> Result<Self> {
        ensure(period.is_finite() && period > 0.0, || {
            format!("seasonal period must be positive, got {period}")
        })?;
        ensure(phase_offset.is_finite(), || {
            "seasonal phase offset must be finite".to_string()
        })?;
        Ok(Self {
            period,
            phase_offset,
        })
    }

    /// Seasonal basis value at time `t` (years); zero at `t = 0`.
    #[inline]
    pub fn seasonal(&self, t: f64) -> f64 {
        (2.0 * PI * t / self.period + self.phase_offset).sin() - self.phase_offset.sin()
    }

    /// Line-of-sight displacement in millimetres for a rate `v` (mm/year) and
    /// seasonal amplitude `a` (mm) at time `t` (years).
    #[inline]
    pub fn displacement_mm(&self, v: f64, a: f64, t: f64) -> f64 {
        v * t + a * self.seasonal(t)
    }
}

/// Displacement `v·t + a·sin(2πt/period)` in millimetres.
///
/// `v` is in mm/year, `a` in mm and `t` in years relative to the master.
pub fn displacement(v: f64, a: f64, t: f64, period: f64) -> Result<f64> {
    ensure(v.is_finite() && a.is_finite() && t.is_finite(), || {
        "displacement inputs must be finite".to_string()
    })?;
    let model = MotionModel::new(period, 0.0)?;
    Ok(model.displacement_mm(v, a, t))
}

/// Baseline configuration of an interferometric stack.
///
/// Each acquisition carries an effective baseline `b_n` (m) and a temporal
/// baseline `t_n` (years), both relative to the master scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRecord", into = "GeometryRecord")]
pub struct StackGeometry {
    wavelength: f64,
    master_range: f64,
    baselines: Vec<f64>,
    temporal_baselines: Vec<f64>,
    master_index: usize,
}

/// Serialized form of [`StackGeometry`]; validated on the way in.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeometryRecord {
    wavelength: f64,
    master_range: f64,
    baselines: Vec<f64>,
    temporal_baselines: Vec<f64>,
}

impl TryFrom<GeometryRecord> for StackGeometry {
    type Error = TomoError;

    fn try_from(r: GeometryRecord) -> Result<Self> {
        Self::new(
            r.wavelength,
            r.master_range,
            r.baselines,
            r.temporal_baselines,
        )
    }
}

impl From<StackGeometry> for GeometryRecord {
    fn from(g: StackGeometry) -> Self {
        Self {
            wavelength: g.wavelength,
            master_range: g.master_range,
            baselines: g.baselines,
            temporal_baselines: g.temporal_baselines,
        }
    }
}

impl StackGeometry {
    pub fn new(
        wavelength: f64,
        master_range: f64,
        baselines: Vec<f64>,
        temporal_baselines: Vec<f64>,
    ) -> Result<Self> {
        ensure(wavelength.is_finite() && wavelength > 0.0, || {
            format!("wavelength must be positive, got {wavelength}")
        })?;
        ensure(master_range.is_finite() && master_range > 0.0, || {
            format!("master range must be positive, got {master_range}")
        })?;
        ensure(!baselines.is_empty(), || {
            "a stack needs at least one acquisition".to_string()
        })?;
        ensure_len(baselines.len(), temporal_baselines.len())?;
        ensure(
            baselines
                .iter()
                .chain(&temporal_baselines)
                .all(|x| x.is_finite()),
            || "baselines must be finite".to_string(),
        )?;
        let masters: Vec<usize> = (0..baselines.len())
            .filter(|&n| baselines[n] == 0.0 && temporal_baselines[n] == 0.0)
            .collect();
        let master_index = match masters.as_slice() {
            [m] => *m,
            [] => {
                return Err(TomoError::InvalidInput(
                    "no master acquisition (b = 0, t = 0) in the stack".into(),
                ))
            }
            _ => {
                return Err(TomoError::InvalidInput(format!(
                    "{} acquisitions claim to be the master (b = 0, t = 0)",
                    masters.len()
                )))
            }
        };
        let geometry = Self {
            wavelength,
            master_range,
            baselines,
            temporal_baselines,
            master_index,
        };
        ensure(
            (0..geometry.len()).all(|n| geometry.elevation_frequency(n).is_finite()),
            || "elevation frequencies overflow".to_string(),
        )?;
        Ok(geometry)
    }

    /// Temporal baselines for `count` acquisitions at a constant repeat
    /// interval, referenced to the acquisition at `master_index`.
    pub fn uniform_temporal_baselines(
        count: usize,
        interval_days: f64,
        master_index: usize,
    ) -> Vec<f64> {
        (0..count)
            .map(|n| (n as f64 - master_index as f64) * interval_days / DAYS_PER_YEAR)
            .collect()
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn master_range(&self) -> f64 {
        self.master_range
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn temporal_baselines(&self) -> &[f64] {
        &self.temporal_baselines
    }

    pub fn master_index(&self) -> usize {
        self.master_index
    }

    /// Number of acquisitions N.
    pub fn len(&self) -> usize {
        self.baselines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baselines.is_empty()
    }

    /// ξ_n = 2·b_n/(λ·r) in cycles per metre of elevation.
    pub fn elevation_frequency(&self, n: usize) -> f64 {
        2.0 * self.baselines[n] / (self.wavelength * self.master_range)
    }

    /// Elevation aperture Δb = max b − min b.
    pub fn aperture(&self) -> f64 {
        let max = self
            .baselines
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self.baselines.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Population standard deviation of the effective baselines.
    pub fn baseline_std(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.baselines.iter().sum::<f64>() / n;
        (self
            .baselines
            .iter()
            .map(|b| (b - mean).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    /// Rayleigh elevation resolution λr/(2Δb) of this stack.
    pub fn elevation_resolution(&self) -> f64 {
        self.wavelength * self.master_range / (2.0 * self.aperture())
    }

    /// Phase kernel for arbitrary (s, v, a) evaluations.
    pub fn steering(&self, motion: MotionModel) -> SteeringKernel {
        SteeringKernel {
            elevation_frequencies: (0..self.len())
                .map(|n| self.elevation_frequency(n))
                .collect(),
            temporal_baselines: self.temporal_baselines.clone(),
            wavelength: self.wavelength,
            motion,
        }
    }
}

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Evaluates steering vectors `r_n(s, v, a) = exp(−i·2π(ξ_n·s + 2·d_n/λ))`
/// off the discrete grid.
#[derive(Debug, Clone)]
pub struct SteeringKernel {
    elevation_frequencies: Vec<f64>,
    temporal_baselines: Vec<f64>,
    wavelength: f64,
    motion: MotionModel,
}

impl SteeringKernel {
    pub fn len(&self) -> usize {
        self.elevation_frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elevation_frequencies.is_empty()
    }

    pub fn motion(&self) -> MotionModel {
        self.motion
    }

    /// Phase (radians, before the minus sign) of acquisition `n`.
    #[inline]
    pub fn phase(&self, n: usize, s: f64, v: f64, a: f64) -> f64 {
        let t = self.temporal_baselines[n];
        let d_m = self.motion.displacement_mm(v, a, t) * 1e-3;
        2.0 * PI * (self.elevation_frequencies[n] * s + 2.0 * d_m / self.wavelength)
    }

    #[inline]
    pub fn entry(&self, n: usize, s: f64, v: f64, a: f64) -> C64 {
        let phi = self.phase(n, s, v, a);
        C64::new(phi.cos(), -phi.sin())
    }

    pub fn vector(&self, s: f64, v: f64, a: f64) -> DVector<C64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|n| self.entry(n, s, v, a)))
    }

    /// `r(s, v, a)ᴴ·x` without materialising the steering vector.
    pub fn correlate(&self, x: &DVector<C64>, s: f64, v: f64, a: f64) -> C64 {
        (0..self.len())
            .map(|n| self.entry(n, s, v, a).conj() * x[n])
            .sum()
    }
}

/// One axis of the parameter grid; strictly increasing samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Axis(Vec<f64>);

impl TryFrom<Vec<f64>> for Axis {
    type Error = TomoError;

    fn try_from(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples)
    }
}

impl From<Axis> for Vec<f64> {
    fn from(axis: Axis) -> Self {
        axis.0
    }
}

impl Axis {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        ensure(!samples.is_empty(), || {
            "grid axis needs at least one sample".into()
        })?;
        ensure(samples.iter().all(|x| x.is_finite()), || {
            "grid axis must be finite".into()
        })?;
        ensure(samples.windows(2).all(|w| w[1] > w[0]), || {
            "grid axis must be strictly increasing".into()
        })?;
        Ok(Self(samples))
    }

    /// `count` evenly spaced samples from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, count: usize) -> Result<Self> {
        ensure(count >= 1, || "axis needs at least one sample".into())?;
        if count == 1 {
            return Self::new(vec![start]);
        }
        let step = (stop - start) / (count - 1) as f64;
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    /// Single-sample axis at zero, for parameters held fixed.
    pub fn fixed_zero() -> Self {
        Self(vec![0.0])
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distance to the neighbouring samples below and above index `i`;
    /// `None` at the axis ends.
    pub fn neighbour_steps(&self, i: usize) -> (Option<f64>, Option<f64>) {
        let below = (i > 0).then(|| self.0[i] - self.0[i - 1]);
        let above = (i + 1 < self.0.len()).then(|| self.0[i + 1] - self.0[i]);
        (below, above)
    }

    fn is_uniform(&self) -> bool {
        if self.0.len() < 3 {
            return true;
        }
        let step = self.0[1] - self.0[0];
        self.0
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0))
    }
}

/// Parameters of one dictionary column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Elevation in metres.
    pub s: f64,
    /// Linear deformation rate in mm/year.
    pub v: f64,
    /// Seasonal amplitude in mm.
    pub a: f64,
}

/// Discretised (s, v, a) parameter space.
///
/// Columns are flattened with elevation varying fastest, then rate, then
/// seasonal amplitude: `l = i_s + n_s·(i_v + n_v·i_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRecord", into = "GridRecord")]
pub struct ElevationMotionGrid {
    s_axis: Axis,
    v_axis: Axis,
    a_axis: Axis,
    motion: MotionModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridRecord {
    s_axis: Axis,
    v_axis: Axis,
    a_axis: Axis,
    #[serde(default)]
    motion: MotionModel,
}

impl TryFrom<GridRecord> for ElevationMotionGrid {
    type Error = TomoError;

    fn try_from(r: GridRecord) -> Result<Self> {
        MotionModel::new(r.motion.period, r.motion.phase_offset)?;
        Ok(Self::new(r.s_axis, r.v_axis, r.a_axis)?.with_motion(r.motion))
    }
}

impl From<ElevationMotionGrid> for GridRecord {
    fn from(g: ElevationMotionGrid) -> Self {
        Self {
            s_axis: g.s_axis,
            v_axis: g.v_axis,
            a_axis: g.a_axis,
            motion: g.motion,
        }
    }
}

impl ElevationMotionGrid {
    pub fn new(s_axis: Axis, v_axis: Axis, a_axis: Axis) -> Result<Self> {
        ensure(s_axis.is_uniform(), || {
            "elevation axis must be uniformly spaced".into()
        })?;
        Ok(Self {
            s_axis,
            v_axis,
            a_axis,
            motion: MotionModel::default(),
        })
    }

    /// Elevation-only grid with the motion parameters pinned to zero.
    pub fn elevation_only(s_axis: Axis) -> Result<Self> {
        Self::new(s_axis, Axis::fixed_zero(), Axis::fixed_zero())
    }

    pub fn with_motion(mut self, motion: MotionModel) -> Self {
        self.motion = motion;
        self
    }

    pub fn s_axis(&self) -> &Axis {
        &self.s_axis
    }

    pub fn v_axis(&self) -> &Axis {
        &self.v_axis
    }

    pub fn a_axis(&self) -> &Axis {
        &self.a_axis
    }

    pub fn motion(&self) -> MotionModel {
        self.motion
    }

    /// Number of columns L.
    pub fn len(&self) -> usize {
        self.s_axis.len() * self.v_axis.len() * self.a_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_index(&self, i_s: usize, i_v: usize, i_a: usize) -> usize {
        debug_assert!(
            i_s < self.s_axis.len() && i_v < self.v_axis.len() && i_a < self.a_axis.len()
        );
        i_s + self.s_axis.len() * (i_v + self.v_axis.len() * i_a)
    }

    /// Inverse of [`column_index`](Self::column_index).
    pub fn axis_indices(&self, column: usize) -> (usize, usize, usize) {
        let ns = self.s_axis.len();
        let nv = self.v_axis.len();
        (column % ns, (column / ns) % nv, column / (ns * nv))
    }

    pub fn point(&self, column: usize) -> GridPoint {
        let (i, j, k) = self.axis_indices(column);
        GridPoint {
            s: self.s_axis.0[i],
            v: self.v_axis.0[j],
            a: self.a_axis.0[k],
        }
    }
}

/// Dense N×L steering matrix of unit-modulus entries.
#[derive(Debug, Clone)]
pub struct TomoDictionary {
    matrix: DMatrix<C64>,
    geometry: StackGeometry,
    grid: ElevationMotionGrid,
    gram: OnceLock<GramEigen>,
}

/// Eigendecomposition of the smaller Gram matrix, `RRᴴ` when N < L and
/// `RᴴR` otherwise.
#[derive(Debug, Clone)]
pub struct GramEigen {
    /// True when the decomposition is of `RRᴴ` (N×N).
    pub row_side: bool,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<C64>,
}

impl GramEigen {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the dictionary under the default memory budget.
pub fn build_dictionary(
    geometry: &StackGeometry,
    grid: &ElevationMotionGrid,
) -> Result<TomoDictionary> {
    build_dictionary_with_budget(geometry, grid, DEFAULT_MEMORY_BUDGET)
}

pub fn build_dictionary_with_budget(
    geometry: &StackGeometry,
    grid: &ElevationMotionGrid,
    budget_bytes: u128,
) -> Result<TomoDictionary> {
    let rows = geometry.len();
    let cols = grid.len();
    let required = rows as u128 * cols as u128 * std::mem::size_of::<C64>() as u128;
    if required > budget_bytes {
        return Err(TomoError::MemoryBudget {
            required,
            available: budget_bytes,
        });
    }
    let kernel = geometry.steering(grid.motion());
    let matrix = DMatrix::from_fn(rows, cols, |n, l| {
        let p = grid.point(l);
        kernel.entry(n, p.s, p.v, p.a)
    });
    Ok(TomoDictionary {
        matrix,
        geometry: geometry.clone(),
        grid: grid.clone(),
        gram: OnceLock::new(),
    })
}

impl TomoDictionary {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn geometry(&self) -> &StackGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &ElevationMotionGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Gram eigendecomposition, computed on first use.
    pub fn gram(&self) -> &GramEigen {
        self.gram.get_or_init(|| {
            let row_side = self.rows() < self.columns();
            let gram = if row_side {
                &self.matrix * self.matrix.adjoint()
            } else {
                self.matrix.ad_mul(&self.matrix)
            };
            let eig = gram.symmetric_eigen();
            GramEigen {
                row_side,
                eigenvalues: eig.eigenvalues.map(|x| x.max(0.0)),
                eigenvectors: eig.eigenvectors,
            }
        })
    }

    /// Squared spectral norm ‖R‖₂².
    pub fn spectral_norm_sq(&self) -> f64 {
        self.gram().max_eigenvalue()
    }

    pub fn kernel(&self) -> SteeringKernel {
        self.geometry.steering(self.grid.motion())
    }

    pub(crate) fn check_measurement(&self, g: &DVector<C64>) -> Result<()> {
        ensure_len(self.rows(), g.len())?;
        ensure(
            g.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            || "measurement vector must be finite".into(),
        )
    }
}

/// Matched-filter magnitude `|Rᴴg|/N` for every column.
///
/// With unit-modulus steering entries this equals the mean of `|g_n|` when
/// `g` is exactly proportional to a column.
pub fn steering_response(dictionary: &TomoDictionary, g: &DVector<C64>) -> Result<Vec<f64>> {
    dictionary.check_measurement(g)?;
    let n = dictionary.rows() as f64;
    let rhs = dictionary.matrix().ad_mul(g);
    Ok(rhs.iter().map(|z| z.norm() / n).collect())
}
