//! File formats: geometry text records, stack documents, point-cloud and
//! plane-fit CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result, TomoError};
use crate::estimators::PixelResult;
use crate::model::{ElevationMotionGrid, MotionModel, StackGeometry, DAYS_PER_YEAR};
use crate::plane::{signed_distances, vertical_residuals, FittedPlane, PointCloud3D};
use crate::simulate::GroundTruthScatterer;
use crate::C64;

/// Version written to and accepted from stack and stats documents.
pub const FORMAT_VERSION: u32 = 1;

fn parse_error(line: usize, message: impl Into<String>) -> TomoError {
    TomoError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a geometry description.
///
/// ```text
/// wavelength 0.031
/// range 661820
/// 2009-06-12  -35.2
/// 2009-07-04    0.0  master
/// 2009-07-26  112.9
/// ```
///
/// The master is the record flagged `master`, or else the single record with
/// a zero baseline. Baselines are re-referenced to the master and dates are
/// converted to years since the master acquisition.
pub fn parse_geometry(text: &str) -> Result<StackGeometry> {
    let mut wavelength = None;
    let mut range = None;
    let mut records: Vec<(NaiveDate, f64, bool)> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let number = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_error(line_no, format!("`{s}` is not a number")))
        };
        match fields[0] {
            "wavelength" | "range" => {
                ensure(fields.len() == 2, || {
                    format!("`{}` takes one value", fields[0])
                })
                .map_err(|e| parse_error(line_no, e.to_string()))?;
                let value = number(fields[1])?;
                if fields[0] == "wavelength" {
                    wavelength = Some(value);
                } else {
                    range = Some(value);
                }
            }
            date => {
                let date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
                    .map_err(|e| parse_error(line_no, format!("bad date `{date}`: {e}")))?;
                let (baseline, master) = match fields.as_slice() {
                    [_, b] => (number(b)?, false),
                    [_, b, "master"] => (number(b)?, true),
                    _ => {
                        return Err(parse_error(
                            line_no,
                            "expected `YYYY-MM-DD baseline [master]`",
                        ))
                    }
                };
                records.push((date, baseline, master));
            }
        }
    }
    let wavelength = wavelength.ok_or_else(|| parse_error(0, "missing `wavelength`"))?;
    let range = range.ok_or_else(|| parse_error(0, "missing `range`"))?;
    ensure(!records.is_empty(), || {
        "geometry has no acquisitions".into()
    })?;

    let flagged: Vec<usize> = (0..records.len()).filter(|&i| records[i].2).collect();
    let master = match flagged.as_slice() {
        [m] => *m,
        [] => {
            let zeros: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].1 == 0.0)
                .collect();
            match zeros.as_slice() {
                [m] => *m,
                [] => {
                    return Err(TomoError::InvalidInput(
                        "no master acquisition: flag one or give it baseline 0".into(),
                    ))
                }
                _ => {
                    return Err(TomoError::InvalidInput(
                        "several zero baselines; flag the master explicitly".into(),
                    ))
                }
            }
        }
        _ => {
            return Err(TomoError::InvalidInput(
                "more than one acquisition flagged as master".into(),
            ))
        }
    };
    let (master_date, master_baseline, _) = records[master];
    let baselines = records.iter().map(|r| r.1 - master_baseline).collect();
    let temporal = records
        .iter()
        .map(|r| (r.0 - master_date).num_days() as f64 / DAYS_PER_YEAR)
        .collect();
    StackGeometry::new(wavelength, range, baselines, temporal)
}

/// One pixel of a stack document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackPixel {
    pub id: u64,
    /// Measurements as `[re, im]` pairs.
    pub g: Vec<[f64; 2]>,
    /// Signal-to-clutter ratio in dB.
    pub scr_db: Option<f64>,
    /// Probability that the pixel is a sidelobe of a neighbour.
    pub sidelobe_likelihood: Option<f64>,
    /// Atmospheric phase per acquisition (rad).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<GroundTruthScatterer>>,
}

impl StackPixel {
    pub fn measurement(&self) -> DVector<C64> {
        DVector::from_iterator(self.g.len(), self.g.iter().map(|p| C64::new(p[0], p[1])))
    }

    pub fn set_measurement(&mut self, g: &DVector<C64>) {
        self.g = g.iter().map(|z| [z.re, z.im]).collect();
    }
}

/// Self-contained input of the inversion pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFile {
    pub format_version: u32,
    pub geometry: StackGeometry,
    #[serde(default)]
    pub motion: MotionModel,
    /// Parameter grid for the inversion; the pipeline configuration may
    /// override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ElevationMotionGrid>,
    /// Raster width in pixels; pixel `id` sits at row `id / width`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u64>,
    /// Ground area covered by the stack (km²).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_km2: Option<f64>,
    /// Complex noise power, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub pixels: Vec<StackPixel>,
}

impl StackFile {
    pub fn validate(&self) -> Result<()> {
        ensure(self.format_version == FORMAT_VERSION, || {
            format!(
                "unsupported stack format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )
        })?;
        let n = self.geometry.len();
        for p in &self.pixels {
            ensure(p.g.len() == n, || {
                format!("pixel {} has {} samples, geometry has {n}", p.id, p.g.len())
            })?;
            if let Some(aps) = &p.aps {
                ensure(aps.len() == n, || {
                    format!("pixel {} has {} APS samples, expected {n}", p.id, aps.len())
                })?;
            }
        }
        Ok(())
    }
}

pub fn read_stack<R: Read>(reader: R) -> Result<StackFile> {
    let stack: StackFile = serde_json::from_reader(reader)?;
    stack.validate()?;
    Ok(stack)
}

pub fn write_stack<W: Write>(writer: W, stack: &StackFile) -> Result<()> {
    serde_json::to_writer_pretty(writer, stack)?;
    Ok(())
}

pub fn read_stack_file(path: &Path) -> Result<StackFile> {
    read_stack(BufReader::new(File::open(path)?))
}

pub fn write_stack_file(path: &Path, stack: &StackFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack(&mut w, stack)?;
    w.flush()?;
    Ok(())
}

/// One row of the exported point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub pixel_id: u64,
    pub scatterer_index: usize,
    pub s_m: f64,
    pub v_mm_yr: f64,
    pub a_mm: f64,
    pub amplitude: f64,
    pub coherence: f64,
    pub rejected_flag: u8,
}

/// Flattens per-pixel results, including rejected estimates.
pub fn point_records<'a, I>(results: I) -> Vec<PointRecord>
where
    I: IntoIterator<Item = (u64, &'a PixelResult)>,
{
    let mut records = Vec::new();
    for (pixel_id, result) in results {
        for (k, (e, &rejected)) in result.estimates.iter().zip(&result.rejected).enumerate() {
            records.push(PointRecord {
                pixel_id,
                scatterer_index: k,
                s_m: e.s,
                v_mm_yr: e.v,
                a_mm: e.a,
                amplitude: e.amplitude,
                coherence: e.coherence,
                rejected_flag: rejected as u8,
            });
        }
    }
    records
}

pub fn write_point_cloud<W: Write>(writer: W, records: &[PointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record([
            "pixel_id",
            "scatterer_index",
            "s_m",
            "v_mm_yr",
            "a_mm",
            "amplitude",
            "coherence",
            "rejected_flag",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud<R: Read>(reader: R) -> Result<Vec<PointRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Turns exported scatterers into 3-D points: x and y from the raster
/// position of the pixel times the pixel spacing (m), z the elevation.
/// Rejected scatterers are skipped.
pub fn cloud_from_records(
    records: &[PointRecord],
    width: u64,
    spacing: [f64; 2],
) -> Result<PointCloud3D> {
    ensure(width > 0, || "raster width must be positive".into())?;
    let mut points = Vec::new();
    for r in records.iter().filter(|r| r.rejected_flag == 0) {
        let row = (r.pixel_id / width) as f64;
        let col = (r.pixel_id % width) as f64;
        points.push([col * spacing[0], row * spacing[1], r.s_m]);
    }
    PointCloud3D::from_points(&points)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct XyzRow {
    x: f64,
    y: f64,
    z: f64,
}

/// Reads a CSV with `x`, `y` and `z` columns.
pub fn read_xyz<R: Read>(reader: R) -> Result<PointCloud3D> {
    let mut r = csv::Reader::from_reader(reader);
    let rows: Vec<XyzRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    PointCloud3D::from_points(&rows.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct DistanceRow {
    x: f64,
    y: f64,
    z: f64,
    vertical_residual: f64,
    distance: f64,
}

/// Plane coefficients as a one-row CSV (`a,b,c,d,iterations,l1_loss`).
pub fn write_plane<W: Write>(writer: W, plane: &FittedPlane) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["a", "b", "c", "d", "iterations", "l1_loss"])?;
    let [a, b, d] = plane.coefficients;
    w.write_record([
        a.to_string(),
        b.to_string(),
        "1".to_string(),
        d.to_string(),
        plane.iterations.to_string(),
        plane.final_residual.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Per-point vertical residual and signed normal distance.
pub fn write_distances<W: Write>(
    writer: W,
    cloud: &PointCloud3D,
    plane: &FittedPlane,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let vertical = vertical_residuals(cloud, plane);
    let distance = signed_distances(cloud, plane);
    for i in 0..cloud.len() {
        w.serialize(DistanceRow {
            x: cloud.x()[i],
            y: cloud.y()[i],
            z: cloud.z()[i],
            vertical_residual: vertical[i],
            distance: distance[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Vertical residual column of a distance CSV.
pub fn read_vertical_residuals<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<DistanceRow>()
        .map(|row| Ok(row?.vertical_residual))
        .collect()
}
