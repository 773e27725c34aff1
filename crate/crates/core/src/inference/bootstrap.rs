use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::components::{ComponentExtractor, ComponentOptions, DistanceLoading, EmpiricalMrt, MrtOptions, StructuralComponents, StructuralTerms};
use super::report::{Decision, Reference, ResidualSummary, ValidationReport};
use super::residuals::{anova_r2, residuals_against, AnovaTable, ConstantPolicy, StructuralResiduals};
use crate::error::{Error, Result};
use crate::estimator::{fit_sar_ivgmm_with, FitOptions, FixedEffectsRegression, GravityFit};
use crate::panel::{pair_at, CountryIndex, ModelSpec, PanelDataset};
use crate::rng::{substream, Stream};
use crate::scalar::{mean, sample_sd, Real};
use crate::spatial::FlowWeight;
use crate::stats;
use crate::structural::{DomesticTrade, MrtMode, MrtSolver};

/// Smallest accepted number of bootstrap replications.
pub const MIN_REPLICATIONS: usize = 199;

/// Replication means whose spread is below this are treated as identical.
const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub sigma: f64,
    pub distance: DistanceLoading,
    pub mrt_mode: MrtMode,
    pub domestic: DomesticTrade,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Inflate resampled residuals by `sqrt(N / dof)`.
    pub rescale_residuals: bool,
    /// Share of replications allowed to fail to converge before aborting.
    pub max_failure_share: f64,
    pub reference: Reference,
    pub mrt_tol: f64,
    pub mrt_max_iter: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            distance: DistanceLoading::Unit,
            mrt_mode: MrtMode::Pooled,
            domestic: DomesticTrade::Excluded,
            replications: 399,
            seed: 1,
            alpha: 0.05,
            rescale_residuals: true,
            max_failure_share: 0.01,
            reference: Reference::Percentile,
            mrt_tol: 1e-12,
            mrt_max_iter: 200_000,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidB(self.replications, MIN_REPLICATIONS));
        }
        if !(self.sigma > 1.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma = {} must exceed 1", self.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} not in (0, 1)", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.max_failure_share) {
            return Err(Error::InvalidConfig(format!("max_failure_share = {} not in [0, 1)", self.max_failure_share)));
        }
        if !(self.mrt_tol > 0.0) || self.mrt_max_iter == 0 {
            return Err(Error::InvalidConfig("MRT tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn component_options(&self) -> ComponentOptions {
        ComponentOptions { sigma: self.sigma, distance: self.distance }
    }

    pub fn mrt_options(&self) -> MrtOptions {
        MrtOptions {
            mode: self.mrt_mode,
            domestic: self.domestic,
            solver: MrtSolver { tol: self.mrt_tol, max_iter: self.mrt_max_iter, ..MrtSolver::default() },
        }
    }
}

/// One pass of fit, component extraction, resistance re-solve and residuals.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Real> {
    pub fit: GravityFit<T>,
    pub components: StructuralComponents<T>,
    pub mrt: EmpiricalMrt<T>,
    pub terms: StructuralTerms<T>,
    /// Pair effects, by pair position.
    pub theta: Vec<T>,
    /// Residuals without a free constant.
    pub residuals: StructuralResiduals<T>,
}

impl<T: Real> Evaluation<T> {
    pub fn anova(&self) -> Result<AnovaTable> {
        anova_r2(&self.theta, &self.residuals.structural)
    }

    pub fn centered_residuals(&self) -> Result<StructuralResiduals<T>> {
        residuals_against(&self.theta, self.residuals.structural.clone(), ConstantPolicy::MeanCentered)
    }
}

#[derive(Debug, Clone)]
enum Fitter<T: Real> {
    Fe(FixedEffectsRegression<T>),
    Sar { weights: FlowWeight<T>, spec: ModelSpec },
}

/// Validation of the pair effects of a gravity model without distance,
/// prepared once for a dataset.
#[derive(Debug, Clone)]
pub struct ValidationPipeline<T: Real> {
    ds: PanelDataset<T>,
    config: ValidationConfig,
    fitter: Fitter<T>,
    extractor: ComponentExtractor<T>,
}

impl<T: Real> ValidationPipeline<T> {
    pub fn new(ds: &PanelDataset<T>, spec: &ModelSpec, config: &ValidationConfig) -> Result<Self> {
        config.validate()?;
        if spec.include_distance {
            return Err(Error::SpecMismatch("validation needs the model without distance".into()));
        }
        let fitter = if spec.spatial {
            let w = spec.weights.as_ref().ok_or_else(|| Error::InvalidSpec("spatial model without weights".into()))?;
            Fitter::Sar { weights: FlowWeight::from_spec(ds, w)?, spec: spec.clone() }
        } else {
            Fitter::Fe(FixedEffectsRegression::new(ds, spec, FitOptions::default())?)
        };
        let extractor = ComponentExtractor::new(ds, &config.component_options())?;
        Ok(Self { ds: ds.clone(), config: *config, fitter, extractor })
    }

    pub fn config(&self) -> &ValidationConfig {
        &self.config
    }

    pub fn dataset(&self) -> &PanelDataset<T> {
        &self.ds
    }

    fn fit(&self, y: &[T]) -> Result<GravityFit<T>> {
        match &self.fitter {
            Fitter::Fe(reg) => reg.fit(y),
            Fitter::Sar { weights, spec } => {
                let ds = self.ds.with_response(y)?;
                fit_sar_ivgmm_with(&ds, spec, weights, spec.instrument_order, FitOptions::default())
            }
        }
    }

    /// Runs the deterministic part of the procedure on response `y`.
    pub fn evaluate(&self, y: &[T]) -> Result<Evaluation<T>> {
        let fit = self.fit(y)?;
        let components = self.extractor.extract(&fit)?;
        let mrt = super::components::solve_empirical_mrt(&components, &self.config.mrt_options())?;
        let terms = StructuralTerms::new(&components, &mrt);
        let theta = fit.pair_effects().ok_or_else(|| Error::SpecMismatch("fit has no pair effects".into()))?;
        let residuals = residuals_against(&theta, terms.combined(), ConstantPolicy::Raw)?;
        Ok(Evaluation { fit, components, mrt, terms, theta, residuals })
    }

    pub fn evaluate_observed(&self) -> Result<Evaluation<T>> {
        self.evaluate(&self.ds.response())
    }

    /// Pseudo-response of replication `b`: fitted values plus residuals drawn
    /// with replacement, and the drawn indices.
    pub fn resample(&self, base: &Evaluation<T>, b: usize) -> (Vec<T>, Vec<usize>) {
        let fit = &base.fit;
        let n = fit.residuals.len();
        let scale = if self.config.rescale_residuals {
            (T::from_usize_lossy(fit.n_obs) / T::from_usize_lossy(fit.dof())).sqrt()
        } else {
            T::one()
        };
        let mut rng = substream(self.config.seed, Stream::Bootstrap, b as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let y = fit.fitted.iter().zip(&idx).map(|(&f, &k)| f + scale * fit.residuals[k]).collect();
        (y, idx)
    }

    pub fn replicate(&self, base: &Evaluation<T>, b: usize) -> Result<Replication<T>> {
        let (y, _) = self.resample(base, b);
        let ev = self.evaluate(&y)?;
        Ok(Replication {
            index: b,
            mean_r: ev.residuals.mean(),
            log_pi: ev.mrt.mean_log_pi(),
            log_p: ev.mrt.mean_log_p(),
            theta: ev.theta,
            r: ev.residuals.r,
        })
    }

    /// Base evaluation and all replications, in replication order.
    pub fn run(&self) -> Result<BootstrapDraws<T>> {
        let base = self.evaluate_observed()?;
        let total = self.config.replications;
        let outcomes: Vec<Result<Replication<T>>> = (0..total).into_par_iter().map(|b| self.replicate(&base, b)).collect();
        let mut replications = Vec::with_capacity(total);
        let mut skipped = Vec::new();
        for (b, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(rep) => replications.push(rep),
                Err(e @ Error::NonConvergence { .. }) => skipped.push((b, e.to_string())),
                Err(e) => return Err(e),
            }
        }
        let budget = (self.config.max_failure_share * total as f64).floor() as usize;
        if skipped.len() > budget {
            return Err(Error::BootstrapFailure { failed: skipped.len(), total });
        }
        Ok(BootstrapDraws { base, replications, skipped, requested: total })
    }

    /// Bootstrap and test in one call.
    pub fn report(&self) -> Result<(ValidationReport, BootstrapDraws<T>)> {
        let draws = self.run()?;
        let report = bootstrap_t_test(&draws, self.config.alpha, self.config.reference)?;
        Ok((report.with_settings(&self.config), draws))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication<T> {
    pub index: usize,
    /// Pair effects, by pair position.
    pub theta: Vec<T>,
    /// Year-averaged `ln Pi_hat`.
    pub log_pi: Vec<T>,
    /// Year-averaged `ln P_hat`.
    pub log_p: Vec<T>,
    pub r: Vec<T>,
    /// `M(r_b)`, the mean of `r` over pairs.
    pub mean_r: T,
}

#[derive(Debug, Clone)]
pub struct BootstrapDraws<T: Real> {
    pub base: Evaluation<T>,
    pub replications: Vec<Replication<T>>,
    /// Replications dropped after failing to converge, with the message.
    pub skipped: Vec<(usize, String)>,
    pub requested: usize,
}

impl<T: Real> BootstrapDraws<T> {
    pub fn means(&self) -> Vec<T> {
        self.replications.iter().map(|r| r.mean_r).collect()
    }

    /// Writes `draws_mean.csv`, `draws_theta.csv`, `draws_mrt.csv` and
    /// `draws_r.csv` into `dir`.
    pub fn write_csv(&self, index: &CountryIndex, dir: &Path) -> Result<()> {
        let n = index.n();
        let mut w = csv::Writer::from_path(dir.join("draws_mean.csv"))?;
        w.write_record(["replication", "mean_r"])?;
        for r in &self.replications {
            w.write_record([r.index.to_string(), r.mean_r.to_string()])?;
        }
        w.flush()?;
        for (file, pick) in [("draws_theta.csv", 0), ("draws_r.csv", 1)] {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            w.write_record(["replication", "origin", "dest", if pick == 0 { "theta" } else { "r" }])?;
            for r in &self.replications {
                let values = if pick == 0 { &r.theta } else { &r.r };
                for (p, v) in values.iter().enumerate() {
                    let (i, j) = pair_at(n, p);
                    w.write_record([r.index.to_string(), index.code(i).into(), index.code(j).into(), v.to_string()])?;
                }
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("draws_mrt.csv"))?;
        w.write_record(["replication", "country", "log_pi", "log_p"])?;
        for r in &self.replications {
            for i in 0..n {
                w.write_record([r.index.to_string(), index.code(i).into(), r.log_pi[i].to_string(), r.log_p[i].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Full bootstrap with a fixed seed: base evaluation plus `config.replications` draws.
pub fn regression_bootstrap<T: Real>(ds: &PanelDataset<T>, spec: &ModelSpec, config: &ValidationConfig) -> Result<BootstrapDraws<T>> {
    ValidationPipeline::new(ds, spec, config)?.run()
}

/// t-test of a zero mean structural residual from bootstrap draws.
pub fn bootstrap_t_test<T: Real>(draws: &BootstrapDraws<T>, alpha: f64, reference: Reference) -> Result<ValidationReport> {
    let b = draws.replications.len();
    if b < MIN_REPLICATIONS {
        return Err(Error::InvalidB(b, MIN_REPLICATIONS));
    }
    let means: Vec<f64> = draws.replications.iter().map(|r| r.mean_r.to_f64_lossy()).collect();
    let (t_stat, p_value, grand_mean, se) = t_test(&means, reference);
    let anova = draws.base.anova()?;
    let decision = if p_value > alpha { Decision::DistanceRemovable } else { Decision::NotRemovable };
    Ok(ValidationReport {
        anova_r2: anova.r2,
        anova,
        t_stat,
        p_value,
        reference,
        replications: b,
        skipped: draws.skipped.len(),
        grand_mean,
        se,
        alpha,
        residuals: ResidualSummary::of(&draws.base.residuals.r),
        decision,
        sigma: draws.base.components.sigma.to_f64_lossy(),
        mrt_mode: draws.base.mrt.mode,
        distance: DistanceLoading::Unit,
        seed: None,
    })
}

/// `(t, p, grand mean, se)` from replication means.
pub(crate) fn t_test(means: &[f64], reference: Reference) -> (f64, f64, f64, f64) {
    let grand = mean(means);
    let se = sample_sd(means);
    if se <= DEGENERATE_TOL {
        return if grand.abs() <= DEGENERATE_TOL { (0.0, 1.0, grand, se) } else { (grand.signum() * f64::INFINITY, 0.0, grand, se) };
    }
    let t = grand / se;
    let p = match reference {
        Reference::Percentile => {
            let extreme = means.iter().filter(|&&m| (m - grand).abs() >= grand.abs()).count();
            extreme as f64 / means.len() as f64
        }
        Reference::StudentT => stats::student_two_sided_p(t, (means.len() - 1) as f64),
    };
    (t, p, grand, se)
}
