//! Spatial structural gravity for dyadic trade panels.
//!
//! Modules follow the workflow: [`panel`] loads balanced origin-destination
//! panels, [`spatial`] builds distance-decay weights and flow lags,
//! [`structural`] solves multilateral resistance terms and simulates worlds,
//! [`estimator`] fits fixed-effects and spatial-lag gravity models, and
//! [`inference`] checks whether pair effects are explained by the structural
//! terms. Numerical code is generic over [`Real`]; the `*64` aliases fix `f64`.

mod error;
pub mod estimator;
pub mod inference;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod panel;
pub mod rng;
mod scalar;
pub mod spatial;
pub mod stats;
pub mod structural;

pub use error::{Error, Result};
pub use estimator::{fit_fe, fit_sar_ivgmm, CoefficientTable, GravityFit};
pub use inference::{bootstrap_t_test, regression_bootstrap, ValidationConfig, ValidationPipeline, ValidationReport};
pub use panel::{CovariateSchema, ModelSpec, PanelDataset};
pub use scalar::Real;
pub use spatial::{FlowWeight, WeightMatrix};
pub use structural::{generate_synthetic, GeneratorConfig, MrtSolution, MrtSolver, StructuralWorld};

pub type PanelDataset64 = PanelDataset<f64>;
pub type WeightMatrix64 = WeightMatrix<f64>;
pub type FlowWeight64 = FlowWeight<f64>;
pub type GravityFit64 = GravityFit<f64>;
pub type StructuralWorld64 = StructuralWorld<f64>;
pub type MrtSolution64 = MrtSolution<f64>;
pub type StructuralComponents64 = inference::StructuralComponents<f64>;
pub type BootstrapDraws64 = inference::BootstrapDraws<f64>;
pub type SyntheticPanel64 = structural::SyntheticPanel<f64>;
