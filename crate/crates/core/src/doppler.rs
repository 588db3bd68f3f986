//! Doppler-centroid annotation: raw-to-image azimuth time conversion for
//! sliding spotlight and interpolation of the 3×3 f_DC grid used for staring
//! spotlight (and per ScanSAR burst).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result, TomoError};

/// First-order Doppler centroid polynomial `c0 + c1·(t − t_ref)` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerPolynomial {
    pub reference_time: f64,
    pub coefficients: [f64; 2],
}

impl DopplerPolynomial {
    pub fn new(c0: f64, c1: f64) -> Self {
        Self {
            reference_time: 0.0,
            coefficients: [c0, c1],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients[0] + self.coefficients[1] * (t - self.reference_time)
    }

    pub fn derivative(&self) -> f64 {
        self.coefficients[1]
    }
}

/// `t_image = t_raw − f_DC(t_raw)/FM`.
pub fn raw_to_image_time(t_raw: f64, fdc: &DopplerPolynomial, fm_rate: f64) -> Result<f64> {
    ensure(fm_rate.is_finite() && fm_rate != 0.0, || {
        "FM rate must be non-zero".into()
    })?;
    ensure(t_raw.is_finite(), || "raw time must be finite".into())?;
    Ok(t_raw - fdc.eval(t_raw) / fm_rate)
}

/// Time conversion guarded against staring spotlight acquisitions, where the
/// FM rate equals the beam sweep rate and the relation breaks down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingTimeConversion {
    pub fdc: DopplerPolynomial,
    pub fm_rate: f64,
}

impl SlidingTimeConversion {
    pub fn new(
        fdc: DopplerPolynomial,
        fm_rate: f64,
        beam_sweep_rate: Option<f64>,
        staring_epsilon: f64,
    ) -> Result<Self> {
        ensure(fm_rate.is_finite() && fm_rate != 0.0, || {
            "FM rate must be non-zero".into()
        })?;
        if let Some(sweep) = beam_sweep_rate {
            if (fm_rate - sweep).abs() < staring_epsilon {
                return Err(TomoError::StaringMode { fm_rate });
            }
        }
        Ok(Self { fdc, fm_rate })
    }

    pub fn convert(&self, t_raw: f64) -> Result<f64> {
        raw_to_image_time(t_raw, &self.fdc, self.fm_rate)
    }
}

/// f_DC samples on {start, centre, stop image time} × {near, mid, far range}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerGrid {
    /// Seconds.
    pub times: [f64; 3],
    /// Metres.
    pub ranges: [f64; 3],
    /// Hz, `values[time][range]`.
    pub values: [[f64; 3]; 3],
}

/// What to do with a query outside the grid's bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    #[default]
    Reject,
    Allow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub value: f64,
    pub extrapolated: bool,
}

fn lagrange_weights(nodes: &[f64; 3], x: f64) -> [f64; 3] {
    let [a, b, c] = *nodes;
    [
        (x - b) * (x - c) / ((a - b) * (a - c)),
        (x - a) * (x - c) / ((b - a) * (b - c)),
        (x - a) * (x - b) / ((c - a) * (c - b)),
    ]
}

impl DopplerGrid {
    pub fn new(times: [f64; 3], ranges: [f64; 3], values: [[f64; 3]; 3]) -> Result<Self> {
        let increasing = |v: &[f64; 3]| v[0] < v[1] && v[1] < v[2];
        ensure(increasing(&times), || {
            "grid times must be strictly increasing".into()
        })?;
        ensure(increasing(&ranges), || {
            "grid ranges must be strictly increasing".into()
        })?;
        ensure(
            times
                .iter()
                .chain(&ranges)
                .chain(values.iter().flatten())
                .all(|x| x.is_finite()),
            || "grid entries must be finite".into(),
        )?;
        Ok(Self {
            times,
            ranges,
            values,
        })
    }

    pub fn contains(&self, t: f64, range: f64) -> bool {
        (self.times[0]..=self.times[2]).contains(&t)
            && (self.ranges[0]..=self.ranges[2]).contains(&range)
    }

    /// Tensor-product quadratic Lagrange interpolation; exact for any
    /// surface that is at most quadratic in each variable.
    pub fn interpolate(&self, t: f64, range: f64, policy: Extrapolation) -> Result<Interpolated> {
        ensure(t.is_finite() && range.is_finite(), || {
            "query must be finite".into()
        })?;
        let extrapolated = !self.contains(t, range);
        if extrapolated && policy == Extrapolation::Reject {
            return Err(TomoError::Extrapolation { time: t, range });
        }
        let wt = lagrange_weights(&self.times, t);
        let wr = lagrange_weights(&self.ranges, range);
        let value = wt
            .iter()
            .zip(&self.values)
            .map(|(w, row)| w * wr.iter().zip(row).map(|(v, x)| v * x).sum::<f64>())
            .sum();
        Ok(Interpolated {
            value,
            extrapolated,
        })
    }
}

/// f_DC at (t_image, range); queries outside the grid are errors.
pub fn interpolate_fdc(grid: &DopplerGrid, t_image: f64, range: f64) -> Result<f64> {
    grid.interpolate(t_image, range, Extrapolation::Reject)
        .map(|i| i.value)
}

/// Parses one or more grid records (one per burst). Each record is three
/// lines, `times t0 t1 t2`, `ranges r0 r1 r2` and `values` followed by nine
/// row-major numbers (time index outer). Blank lines and `#` comments are
/// ignored.
pub fn parse_doppler_grids(text: &str) -> Result<Vec<DopplerGrid>> {
    let mut grids = Vec::new();
    let mut times: Option<[f64; 3]> = None;
    let mut ranges: Option<[f64; 3]> = None;
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let numbers: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| TomoError::Parse {
                    line: line_no,
                    message: format!("`{p}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        let expect = |n: usize| -> Result<()> {
            if numbers.len() == n {
                Ok(())
            } else {
                Err(TomoError::Parse {
                    line: line_no,
                    message: format!("`{key}` needs {n} values, found {}", numbers.len()),
                })
            }
        };
        match key {
            "times" => {
                expect(3)?;
                times = Some([numbers[0], numbers[1], numbers[2]]);
            }
            "ranges" => {
                expect(3)?;
                ranges = Some([numbers[0], numbers[1], numbers[2]]);
            }
            "values" => {
                expect(9)?;
                let (Some(t), Some(r)) = (times.take(), ranges.take()) else {
                    return Err(TomoError::Parse {
                        line: line_no,
                        message: "`values` before `times` and `ranges`".into(),
                    });
                };
                let mut values = [[0.0; 3]; 3];
                for (k, v) in numbers.iter().enumerate() {
                    values[k / 3][k % 3] = *v;
                }
                grids.push(
                    DopplerGrid::new(t, r, values).map_err(|e| TomoError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })?,
                );
            }
            other => {
                return Err(TomoError::Parse {
                    line: line_no,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    if times.is_some() || ranges.is_some() {
        return Err(TomoError::Parse {
            line: text.lines().count(),
            message: "incomplete grid record".into(),
        });
    }
    Ok(grids)
}
