use std::path::Path;

use serde::Serialize;

use super::compare::CoefficientTable;
use super::fit::{CovarianceType, GravityFit};
use crate::error::{Error, Result};
use crate::panel::{pair_at, CountryIndex, ModelSpec, PanelShape};
use crate::scalar::Real;

/// Machine-readable summary written next to the coefficient table.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub spec: ModelSpec,
    pub shape: PanelShape,
    pub covariance: CovarianceType,
    pub n_obs: usize,
    pub dof: usize,
    pub r_squared: f64,
    pub within_r_squared: f64,
    pub first_stage_f: Option<f64>,
    pub absorbed: Vec<String>,
    pub warnings: Vec<String>,
}

impl<T: Real> From<&GravityFit<T>> for FitSummary {
    fn from(fit: &GravityFit<T>) -> Self {
        Self {
            spec: fit.spec.clone(),
            shape: fit.shape,
            covariance: fit.covariance,
            n_obs: fit.n_obs,
            dof: fit.dof(),
            r_squared: fit.r_squared.to_f64_lossy(),
            within_r_squared: fit.within_r_squared.to_f64_lossy(),
            first_stage_f: fit.first_stage_f.map(|f| f.to_f64_lossy()),
            absorbed: fit.absorbed.clone(),
            warnings: fit.warnings.clone(),
        }
    }
}

/// Writes `coefficients.csv`, `pair_effects.csv` (when pair effects exist),
/// `residuals.csv` and `fit.toml` into `dir`.
pub fn write_fit<T: Real>(fit: &GravityFit<T>, index: &CountryIndex, years: &[i32], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    CoefficientTable::from_fit(fit).write_csv(&dir.join("coefficients.csv"))?;
    if fit.pair_effects().is_some() {
        write_pair_effects(fit, index, &dir.join("pair_effects.csv"))?;
    }
    write_residuals(fit, index, years, &dir.join("residuals.csv"))?;
    let summary = toml::to_string(&FitSummary::from(fit)).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("fit.toml"), summary)?;
    Ok(())
}

pub fn write_pair_effects<T: Real>(fit: &GravityFit<T>, index: &CountryIndex, path: &Path) -> Result<()> {
    let theta = fit.pair_effects().ok_or_else(|| Error::SpecMismatch("fit has no pair effects".into()))?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["origin", "dest", "theta"])?;
    for (p, v) in theta.iter().enumerate() {
        let (i, j) = pair_at(index.n(), p);
        w.write_record([index.code(i), index.code(j), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals<T: Real>(fit: &GravityFit<T>, index: &CountryIndex, years: &[i32], path: &Path) -> Result<()> {
    let pairs = fit.shape.pairs();
    if years.len() != fit.shape.years || index.n() != fit.shape.n {
        return Err(Error::IndexMismatch("country index or years do not match the fit".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["origin", "dest", "year", "residual"])?;
    for (r, e) in fit.residuals.iter().enumerate() {
        let (i, j) = pair_at(index.n(), r % pairs);
        w.write_record([index.code(i), index.code(j), &years[r / pairs].to_string(), &e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
