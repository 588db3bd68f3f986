//! Multibaseline SAR tomography toolkit.
//!
//! The crate simulates interferometric stacks with known ground truth,
//! inverts each pixel for up to two point scatterers in elevation and motion,
//! and assesses the resulting point clouds with robust plane fitting and
//! accuracy statistics.

pub mod doppler;
pub mod error;
pub mod estimators;
pub mod io;
pub mod metrology;
pub mod model;
pub mod pipeline;
pub mod plane;
pub mod simulate;

/// Complex sample type used throughout.
pub type C64 = nalgebra::Complex<f64>;

pub use error::{Result, TomoError};
pub use estimators::{
    EstimatorConfig, Method, ModelPenalty, PixelProcessor, PixelResult, ScattererEstimate,
    SpectrumEstimate,
};
pub use model::{
    build_dictionary, displacement, steering_response, Axis, ElevationMotionGrid, MotionModel,
    StackGeometry, TomoDictionary,
};
pub use simulate::{GroundTruthScatterer, NoiseLevel};
