//! Validation of pair fixed effects against the structural model: component
//! extraction, re-solved resistance terms, structural residuals, variance
//! decomposition and a residual-bootstrap t-test.

mod bootstrap;
mod components;
mod report;
mod residuals;

pub use bootstrap::{
    bootstrap_t_test, regression_bootstrap, BootstrapDraws, Evaluation, Replication, ValidationConfig, ValidationPipeline,
    MIN_REPLICATIONS,
};
pub use components::{
    extract_components, solve_empirical_mrt, ComponentExtractor, ComponentOptions, DistanceLoading, EmpiricalMrt, MrtOptions,
    ProvenanceEntry, StructuralComponents, StructuralTerms,
};
pub use report::{Decision, Reference, ResidualSummary, ValidationReport};
pub use residuals::{anova_r2, structural_residuals, AnovaTable, ConstantPolicy, StructuralResiduals};
