use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::absorb::Absorber;
use super::linalg::{column_norms, independent_columns, rss, sandwich, two_sls, QrLs};
use crate::error::{Error, Result};
use crate::panel::{build_design, pair_at, DesignBundle, FactorKind, ModelSpec, PanelDataset, PanelShape};
use crate::scalar::Real;
use crate::spatial::FlowWeight;
use crate::stats;

/// First-stage F below this value flags weak instruments.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    /// Heteroskedasticity-robust (HC1 with absorbed degrees of freedom).
    #[default]
    Robust,
    Conventional,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub covariance: CovarianceType,
    /// Turn a weak first stage into an error instead of a warning.
    pub strict_instruments: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient<T> {
    pub name: String,
    pub estimate: T,
    pub se: T,
}

impl<T: Real> Coefficient<T> {
    pub fn z(&self) -> f64 {
        self.estimate.to_f64_lossy() / self.se.to_f64_lossy()
    }

    pub fn p_value(&self) -> f64 {
        stats::normal_two_sided_p(self.z())
    }

    pub fn stars(&self) -> &'static str {
        stats::stars(self.p_value())
    }
}

/// Estimated effects of one dummy block, indexed by group.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectBlock<T> {
    pub kind: FactorKind,
    pub values: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GravityFit<T: Real> {
    pub spec: ModelSpec,
    pub shape: PanelShape,
    pub covariance: CovarianceType,
    pub coefficients: Vec<Coefficient<T>>,
    /// Spatial autoregressive coefficient of SAR fits.
    pub rho: Option<Coefficient<T>>,
    /// Requested regressors absorbed by pair effects.
    pub absorbed: Vec<String>,
    pub effects: Vec<EffectBlock<T>>,
    /// Residuals in canonical estimation order.
    pub residuals: Vec<T>,
    pub fitted: Vec<T>,
    pub n_obs: usize,
    /// Rank of the absorbed dummy blocks.
    pub absorbed_dof: usize,
    pub r_squared: T,
    pub within_r_squared: T,
    pub first_stage_f: Option<T>,
    pub warnings: Vec<String>,
}

impl<T: Real> GravityFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient<T>> {
        if name == "rho" {
            return self.rho.as_ref();
        }
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn beta(&self, name: &str) -> Option<T> {
        self.coefficient(name).map(|c| c.estimate)
    }

    /// Estimated parameters, including `rho` for SAR fits.
    pub fn n_params(&self) -> usize {
        self.coefficients.len() + usize::from(self.rho.is_some())
    }

    /// Residual degrees of freedom `N - K - A`.
    pub fn dof(&self) -> usize {
        self.n_obs - self.n_params() - self.absorbed_dof
    }

    pub fn effect(&self, kind: FactorKind) -> Option<&[T]> {
        self.effects.iter().find(|e| e.kind == kind).map(|e| e.values.as_slice())
    }

    /// Pair effects by canonical pair position; symmetric effects are
    /// repeated for both directions.
    pub fn pair_effects(&self) -> Option<Vec<T>> {
        let n = self.shape.n;
        if let Some(v) = self.effect(FactorKind::Pair) {
            return Some(v.to_vec());
        }
        let v = self.effect(FactorKind::SymmetricPair)?;
        Some(
            (0..self.shape.pairs())
                .map(|p| {
                    let (i, j) = pair_at(n, p);
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    v[a * (2 * n - a - 1) / 2 + (b - a - 1)]
                })
                .collect(),
        )
    }

    pub fn time_effects(&self) -> Option<&[T]> {
        self.effect(FactorKind::Time)
    }

    /// `Err(WeakInstruments)` when the first stage is weak.
    pub fn check_instruments(&self) -> Result<()> {
        match self.first_stage_f {
            Some(f) if f.to_f64_lossy() < WEAK_INSTRUMENT_F => Err(Error::WeakInstruments(f.to_f64_lossy())),
            _ => Ok(()),
        }
    }
}

/// Fixed-effects least squares with default options.
pub fn fit_fe<T: Real>(ds: &PanelDataset<T>, spec: &ModelSpec) -> Result<GravityFit<T>> {
    fit_fe_with(ds, spec, FitOptions::default())
}

pub fn fit_fe_with<T: Real>(ds: &PanelDataset<T>, spec: &ModelSpec, options: FitOptions) -> Result<GravityFit<T>> {
    FixedEffectsRegression::new(ds, spec, options)?.fit(&ds.response())
}

/// A within regression prepared once (design, absorption, factorisation) and
/// re-usable for any response on the same panel.
#[derive(Debug, Clone)]
pub struct FixedEffectsRegression<T: Real> {
    spec: ModelSpec,
    design: DesignBundle<T>,
    absorber: Absorber,
    x_within: DMatrix<T>,
    ls: QrLs<T>,
    options: FitOptions,
}

impl<T: Real> FixedEffectsRegression<T> {
    pub fn new(ds: &PanelDataset<T>, spec: &ModelSpec, options: FitOptions) -> Result<Self> {
        if spec.spatial {
            return Err(Error::InvalidSpec("spatial lag models are estimated by IV/GMM".into()));
        }
        let lag = spec.weights.as_ref().map(|w| FlowWeight::from_spec(ds, w)).transpose()?;
        let design = build_design(ds, spec, lag.as_ref())?;
        let absorber = Absorber::new(&design.factors);
        let x_within = absorber.demean_matrix(&design.regressors)?;
        let ls = QrLs::new(&x_within, &design.names, &column_norms(&design.regressors))?;
        let used = design.names.len() + design.absorbed_dof();
        if used >= design.n_obs() {
            return Err(Error::InvalidSpec("no residual degrees of freedom".into()));
        }
        Ok(Self { spec: spec.clone(), design, absorber, x_within, ls, options })
    }

    pub fn design(&self) -> &DesignBundle<T> {
        &self.design
    }

    /// Residual degrees of freedom `N - K - A`.
    pub fn dof(&self) -> usize {
        self.design.n_obs() - self.design.names.len() - self.design.absorbed_dof()
    }

    /// Annihilates the dummy blocks and the regressors: `M v`.
    pub(crate) fn residual_maker(&self, v: &[T]) -> Result<Vec<T>> {
        let mut w = v.to_vec();
        self.absorber.demean(&mut w)?;
        let w = DVector::from_vec(w);
        Ok((&w - self.ls.project(&w)).iter().copied().collect())
    }

    pub fn fit(&self, y: &[T]) -> Result<GravityFit<T>> {
        let n_obs = self.design.n_obs();
        if y.len() != n_obs {
            return Err(Error::DimensionMismatch { expected: n_obs, found: y.len() });
        }
        let mut yw = y.to_vec();
        self.absorber.demean(&mut yw)?;
        let yw = DVector::from_vec(yw);
        let beta = self.ls.solve(&yw);
        let e = &yw - &self.x_within * &beta;
        let dof = T::from_usize_lossy(self.dof());
        let cov = match self.options.covariance {
            CovarianceType::Robust => {
                sandwich(&self.ls.bread(), &self.x_within, &e, T::from_usize_lossy(n_obs) / dof)
            }
            CovarianceType::Conventional => self.ls.bread() * (e.norm_squared() / dof),
        };
        let coefficients = coefficients(&self.design.names, &beta, &cov);
        let structural: Vec<T> = (0..n_obs).map(|r| y[r] - (self.design.regressors.row(r) * &beta)[0]).collect();
        let effects = self.absorber.effects(&structural)?;
        Ok(assemble(
            &self.spec,
            &self.design,
            self.options,
            coefficients,
            None,
            effects.values,
            y,
            &yw,
            e,
            None,
            Vec::new(),
        ))
    }
}

fn coefficients<T: Real>(names: &[String], est: &DVector<T>, cov: &DMatrix<T>) -> Vec<Coefficient<T>> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| Coefficient { name: name.clone(), estimate: est[k], se: cov[(k, k)].max(T::zero()).sqrt() })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble<T: Real>(
    spec: &ModelSpec,
    design: &DesignBundle<T>,
    options: FitOptions,
    coefficients: Vec<Coefficient<T>>,
    rho: Option<Coefficient<T>>,
    effect_values: Vec<Vec<T>>,
    y: &[T],
    y_within: &DVector<T>,
    e: DVector<T>,
    first_stage_f: Option<T>,
    warnings: Vec<String>,
) -> GravityFit<T> {
    let ybar = crate::scalar::mean(y);
    let tss: T = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    let ess = e.norm_squared();
    let ratio = |den: T| if den > T::zero() { T::one() - ess / den } else { T::zero() };
    let effects = design
        .factors
        .iter()
        .zip(effect_values)
        .filter(|(f, _)| f.kind != FactorKind::Constant || design.factors.len() == 1)
        .map(|(f, values)| EffectBlock { kind: f.kind, values })
        .collect();
    let residuals: Vec<T> = e.iter().copied().collect();
    let fitted = y.iter().zip(&residuals).map(|(&a, &b)| a - b).collect();
    GravityFit {
        spec: spec.clone(),
        shape: design.shape,
        covariance: options.covariance,
        coefficients,
        rho,
        absorbed: design.absorbed.clone(),
        effects,
        residuals,
        fitted,
        n_obs: design.n_obs(),
        absorbed_dof: design.absorbed_dof(),
        r_squared: ratio(tss),
        within_r_squared: ratio(y_within.norm_squared()),
        first_stage_f,
        warnings,
    }
}

/// Spatial-lag gravity model by IV/GMM (two-stage least squares on the
/// within-transformed data), instrumenting `Wy` with `[WX, ..., W^q X]`.
pub fn fit_sar_ivgmm<T: Real>(ds: &PanelDataset<T>, spec: &ModelSpec, weights: &FlowWeight<T>, q: usize) -> Result<GravityFit<T>> {
    fit_sar_ivgmm_with(ds, spec, weights, q, FitOptions::default())
}

pub fn fit_sar_ivgmm_with<T: Real>(
    ds: &PanelDataset<T>,
    spec: &ModelSpec,
    weights: &FlowWeight<T>,
    q: usize,
    options: FitOptions,
) -> Result<GravityFit<T>> {
    if !(1..=2).contains(&q) {
        return Err(Error::InvalidSpec(format!("instrument order {q} not in {{1, 2}}")));
    }
    if weights.n() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), found: weights.n() });
    }
    let design = build_design(ds, spec, Some(weights))?;
    let k = design.names.len();
    if k == 0 {
        return Err(Error::InvalidSpec("the spatial lag needs at least one exogenous regressor to build instruments".into()));
    }
    let n_obs = design.n_obs();
    let absorber = Absorber::new(&design.factors);
    let y: Vec<T> = design.response.iter().copied().collect();
    let wy = weights.lag_panel(&y)?;

    let x = &design.regressors;
    let mut lagged = Vec::with_capacity(q);
    let mut current = x.clone();
    for _ in 0..q {
        let next = DMatrix::from_columns(
            &(0..k)
                .map(|c| weights.lag_panel(current.column(c).as_slice()).map(DVector::from_vec))
                .collect::<Result<Vec<_>>>()?,
        );
        lagged.push(next.clone());
        current = next;
    }

    let demean = |v: &[T]| -> Result<DVector<T>> {
        let mut w = v.to_vec();
        absorber.demean(&mut w)?;
        Ok(DVector::from_vec(w))
    };
    let yw = demean(&y)?;
    let wyw = demean(&wy)?;
    let xw = absorber.demean_matrix(x)?;
    let mut h = xw.clone();
    for block in &lagged {
        let bw = absorber.demean_matrix(block)?;
        let at = h.ncols();
        h = h.insert_columns(at, bw.ncols(), T::zero());
        let start = h.ncols() - bw.ncols();
        h.columns_mut(start, bw.ncols()).copy_from(&bw);
    }
    let mut z = xw.clone().insert_column(0, T::zero());
    z.set_column(0, &wyw);

    let mut names = vec!["rho".to_string()];
    names.extend(design.names.iter().cloned());
    let absorbed_dof = design.absorbed_dof();
    if n_obs <= k + 1 + absorbed_dof {
        return Err(Error::InvalidSpec("no residual degrees of freedom".into()));
    }
    let iv = two_sls(&yw, &z, &h, &names)?;
    let dof = T::from_usize_lossy(n_obs - k - 1 - absorbed_dof);
    let cov = match options.covariance {
        CovarianceType::Robust => sandwich(&iv.bread, &iv.zhat, &iv.resid, T::from_usize_lossy(n_obs) / dof),
        CovarianceType::Conventional => &iv.bread * (iv.resid.norm_squared() / dof),
    };
    let mut coefs = coefficients(&names, &iv.delta, &cov);
    let rho = coefs.remove(0);

    // first stage: excluded instruments against the included exogenous regressors
    let l = iv.instruments.ncols();
    let excluded = l - independent_columns(&xw).len();
    let first_stage_f = if excluded == 0 {
        T::zero()
    } else {
        let rss_u = rss(&wyw, &iv.instruments)?;
        let rss_r = rss(&wyw, &xw)?;
        let den_dof = n_obs.saturating_sub(l + absorbed_dof).max(1);
        let num = (rss_r - rss_u) / T::from_usize_lossy(excluded);
        let den = rss_u / T::from_usize_lossy(den_dof);
        if den > T::zero() {
            num / den
        } else {
            T::max_value().unwrap_or_else(T::one)
        }
    };
    let mut warnings = Vec::new();
    if first_stage_f.to_f64_lossy() < WEAK_INSTRUMENT_F {
        if options.strict_instruments {
            return Err(Error::WeakInstruments(first_stage_f.to_f64_lossy()));
        }
        warnings.push(format!("weak instruments: first-stage F = {:.3}", first_stage_f.to_f64_lossy()));
    }

    let beta = iv.delta.rows(1, k).into_owned();
    let structural: Vec<T> = (0..n_obs).map(|r| y[r] - rho.estimate * wy[r] - (x.row(r) * &beta)[0]).collect();
    let effects = absorber.effects(&structural)?;
    Ok(assemble(spec, &design, options, coefs, Some(rho), effects.values, &y, &yw, iv.resid, Some(first_stage_f), warnings))
}
