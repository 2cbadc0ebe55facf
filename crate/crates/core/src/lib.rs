//! Kernel hazard estimation for filtered event data.
//!
//! Local linear and multiplicatively bias corrected estimators on aggregated
//! occurrence/exposure grids, cross-validated bandwidth selection (ordinary,
//! one-sided, double one-sided and best one-sided), the constants comparing
//! the selectors asymptotically, a Monte Carlo harness and run-off triangle
//! forecasting.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod constants;
pub mod data;
pub mod error;
pub mod estimators;
pub mod forecasting;
pub mod kernel;
pub mod poly;
pub mod quadrature;
pub mod scalar;
pub mod selection;
pub mod simulation;

pub use constants::{Estimator, PsiMethod, PsiRow};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, SideMode};
pub use kernel::{BuiltinKernel, Side};
pub use selection::SelectionMethod;

pub type Kernel = kernel::Kernel<f64>;
pub type KernelMoments = kernel::KernelMoments<f64>;
pub type GridSample = data::GridSample<f64>;
pub type IndividualRecord = data::IndividualRecord<f64>;
pub type WeightScheme = data::WeightScheme<f64>;
pub type HazardEstimate = estimators::HazardEstimate<f64>;
pub type BandwidthGrid = selection::BandwidthGrid<f64>;
pub type SelectionResult = selection::SelectionResult<f64>;
pub type StudyReport = simulation::StudyReport<f64>;
pub type RunOffTriangle = forecasting::RunOffTriangle<f64>;
pub type ComponentEstimates = forecasting::ComponentEstimates<f64>;
pub type Forecast = forecasting::Forecast<f64>;
