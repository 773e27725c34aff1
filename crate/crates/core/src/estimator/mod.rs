//! Panel gravity estimators: fixed-effects least squares and the spatial-lag
//! IV/GMM estimator, plus coefficient comparison and fit serialization.

pub(crate) mod absorb;
mod compare;
mod fit;
mod io;
pub(crate) mod linalg;

pub use compare::{compare_specs, compare_tables, render_table1, CoefficientRow, CoefficientTable, Comparison, ComparisonRow};
pub use fit::{
    fit_fe, fit_fe_with, fit_sar_ivgmm, fit_sar_ivgmm_with, Coefficient, CovarianceType, EffectBlock, FitOptions,
    FixedEffectsRegression, GravityFit, WEAK_INSTRUMENT_F,
};
pub use io::{write_fit, write_pair_effects, write_residuals, FitSummary};
