use thiserror::Error;

/// Errors reported by the tomography toolkit.
#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dictionary needs {required} bytes but the memory budget is {available} bytes")]
    MemoryBudget { required: u128, available: u128 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("target false positive rate {target} is unreachable with penalty coefficients up to {max_coefficient}")]
    UnreachableTarget { target: f64, max_coefficient: f64 },

    #[error("query ({time}, {range}) lies outside the Doppler grid")]
    Extrapolation { time: f64, range: f64 },

    #[error("staring spotlight acquisition: FM rate {fm_rate} Hz/s matches the beam sweep rate")]
    StaringMode { fm_rate: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("stage `{stage}` failed{}: {source}", pixel.map(|p| format!(" at pixel {p}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        pixel: Option<u64>,
        source: Box<TomoError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TomoError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            already @ TomoError::Stage { .. } => already,
            other => TomoError::Stage {
                stage,
                pixel: None,
                source: Box::new(other),
            },
        }
    }

    pub fn at_pixel(self, pixel: u64) -> Self {
        match self {
            TomoError::Stage { stage, source, .. } => TomoError::Stage {
                stage,
                pixel: Some(pixel),
                source,
            },
            other => TomoError::Stage {
                stage: "pixel",
                pixel: Some(pixel),
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, TomoError>;

pub(crate) fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(TomoError::InvalidInput(message()))
    }
}

pub(crate) fn ensure_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(TomoError::DimensionMismatch { expected, actual })
    }
}
