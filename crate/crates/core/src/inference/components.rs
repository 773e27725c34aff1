use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::linalg::{column_norms, independent_columns, QrLs};
use crate::estimator::GravityFit;
use crate::panel::{pair_at, Component, PairEffects, PanelDataset, PanelShape, Variation};
use crate::scalar::Real;
use crate::structural::{DomesticTrade, MrtMode, MrtSolution, MrtSolver, StructuralWorld};

/// How log distance loads on the total trade cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceLoading {
    /// `ln T = ln dist + T2`.
    #[default]
    Unit,
    /// Loading given by the flow-equation distance coefficient of a
    /// with-distance fit, `ln T = psi / (1 - sigma) ln dist + T2`.
    Estimated(f64),
}

impl DistanceLoading {
    /// Reads the `dist` coefficient of a with-distance fit.
    pub fn from_fit<T: Real>(fit: &GravityFit<T>) -> Result<Self> {
        fit.beta("dist")
            .map(|b| DistanceLoading::Estimated(b.to_f64_lossy()))
            .ok_or_else(|| Error::MissingCovariate("dist".into()))
    }

    /// Loading on the log-cost scale.
    pub fn cost_loading(self, sigma: f64) -> f64 {
        match self {
            DistanceLoading::Unit => 1.0,
            DistanceLoading::Estimated(psi) => psi / (1.0 - sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentOptions {
    pub sigma: f64,
    pub distance: DistanceLoading,
}

impl Default for ComponentOptions {
    fn default() -> Self {
        Self { sigma: 4.0, distance: DistanceLoading::Unit }
    }
}

/// Origin of one coefficient used to build a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    /// `origin_size`, `dest_size`, `cost` or `distance`.
    pub component: String,
    pub covariate: String,
    pub coefficient: f64,
    /// `fit`, `pair_effects`, `unit` or `with_distance_fit`.
    pub source: String,
}

/// Size indices and trade-cost indices on the log scale.
#[derive(Debug, Clone)]
pub struct StructuralComponents<T> {
    pub shape: PanelShape,
    pub sigma: T,
    /// `X_hat`, indexed `t * n + i`.
    pub origin_size: Vec<T>,
    /// `E_hat`, indexed `t * n + j`.
    pub dest_size: Vec<T>,
    /// Non-transport trade cost `T2_hat`, by pair position.
    pub cost: Vec<T>,
    /// Distance part of the log trade cost, by pair position.
    pub distance: Vec<T>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl<T: Real> StructuralComponents<T> {
    /// `T_hat = dist + T2_hat`, by pair position.
    pub fn total_cost(&self) -> Vec<T> {
        self.distance.iter().zip(&self.cost).map(|(&d, &c)| d + c).collect()
    }

    pub fn origin_size_at(&self, i: usize, t: usize) -> T {
        self.origin_size[t * self.shape.n + i]
    }

    pub fn dest_size_at(&self, j: usize, t: usize) -> T {
        self.dest_size[t * self.shape.n + j]
    }

    fn check_finite(&self) -> Result<()> {
        let blocks: [(&str, &[T]); 4] = [
            ("origin_size", &self.origin_size),
            ("dest_size", &self.dest_size),
            ("cost", &self.cost),
            ("distance", &self.distance),
        ];
        for (name, v) in blocks {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteComponent(name.into()));
            }
        }
        Ok(())
    }
}

/// Builds structural components from a gravity fit without distance and
/// directional pair effects.
///
/// Size indices combine the fitted size coefficients with their covariates.
/// The non-transport cost loadings come from projecting the pair effects net
/// of the distance term on the pair-constant cost covariates and on origin and
/// destination dummies.
pub fn extract_components<T: Real>(
    fit: &GravityFit<T>,
    ds: &PanelDataset<T>,
    options: &ComponentOptions,
) -> Result<StructuralComponents<T>> {
    ComponentExtractor::new(ds, options)?.extract(fit)
}

/// Component extraction prepared once for a dataset and re-used across fits.
#[derive(Debug, Clone)]
pub struct ComponentExtractor<T: Real> {
    shape: PanelShape,
    sigma: T,
    distance_loading: T,
    distance_source: &'static str,
    origin_covariates: Vec<(String, Vec<T>)>,
    dest_covariates: Vec<(String, Vec<T>)>,
    cost_names: Vec<String>,
    cost_values: Vec<Vec<T>>,
    /// Cost columns kept in the projection (others are spanned by the dummies).
    kept: Vec<usize>,
    distance: Vec<T>,
    projection: QrLs<T>,
}

impl<T: Real> ComponentExtractor<T> {
    pub fn new(ds: &PanelDataset<T>, options: &ComponentOptions) -> Result<Self> {
        if !(options.sigma > 1.0) || !options.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma = {} must exceed 1", options.sigma)));
        }
        let shape = ds.shape();
        let (n, years, pairs) = (shape.n, shape.years, shape.pairs());
        let mut origin_covariates = Vec::new();
        let mut dest_covariates = Vec::new();
        let mut cost_names = Vec::new();
        let mut cost_values: Vec<Vec<T>> = Vec::new();
        for (c, (name, role)) in ds.schema().entries().iter().enumerate() {
            match (role.component, role.variation) {
                (Component::Size, Variation::Origin) => {
                    let v = (0..years).flat_map(|t| (0..n).map(move |i| (t, i))).map(|(t, i)| ds.origin_value(c, i, t)).collect();
                    origin_covariates.push((name.clone(), v));
                }
                (Component::Size, Variation::Dest) => {
                    let v = (0..years).flat_map(|t| (0..n).map(move |j| (t, j))).map(|(t, j)| ds.dest_value(c, j, t)).collect();
                    dest_covariates.push((name.clone(), v));
                }
                (Component::Cost, _) => {
                    cost_names.push(name.clone());
                    cost_values.push((0..pairs).map(|p| pair_at(n, p)).map(|(i, j)| ds.covariate(c, i, j, 0)).collect());
                }
                _ => {}
            }
        }
        let loading = options.distance.cost_loading(options.sigma);
        if !loading.is_finite() {
            return Err(Error::NonFiniteComponent("distance".into()));
        }
        let distance_loading = T::lit(loading);
        let distance = (0..pairs).map(|p| pair_at(n, p)).map(|(i, j)| distance_loading * ds.log_distance()[(i, j)]).collect();

        // dummies first so that cost covariates spanned by them are dropped
        let dummies = 2 * n - 1;
        let x = DMatrix::from_fn(pairs, dummies + cost_names.len(), |p, c| {
            let (i, j) = pair_at(n, p);
            if c < n {
                T::from_usize_lossy(usize::from(i == c))
            } else if c < dummies {
                T::from_usize_lossy(usize::from(j == c - n + 1))
            } else {
                cost_values[c - dummies][p]
            }
        });
        let keep = independent_columns(&x);
        if keep.iter().filter(|&&c| c < dummies).count() < dummies {
            return Err(Error::RankDeficient(vec!["country dummies".into()]));
        }
        let kept: Vec<usize> = keep.iter().filter(|&&c| c >= dummies).map(|c| c - dummies).collect();
        let xs = x.select_columns(&keep);
        let names: Vec<String> = keep
            .iter()
            .map(|&c| if c < dummies { format!("dummy{c}") } else { cost_names[c - dummies].clone() })
            .collect();
        let projection = QrLs::new(&xs, &names, &column_norms(&xs))?;
        Ok(Self {
            shape,
            sigma: T::lit(options.sigma),
            distance_loading,
            distance_source: match options.distance {
                DistanceLoading::Unit => "unit",
                DistanceLoading::Estimated(_) => "with_distance_fit",
            },
            origin_covariates,
            dest_covariates,
            cost_names,
            cost_values,
            kept,
            distance,
            projection,
        })
    }

    pub fn extract(&self, fit: &GravityFit<T>) -> Result<StructuralComponents<T>> {
        if fit.spec.include_distance {
            return Err(Error::SpecMismatch("components need a fit without distance".into()));
        }
        if fit.spec.pair_effects != PairEffects::Directional {
            return Err(Error::SpecMismatch("components need directional pair effects".into()));
        }
        if fit.shape != self.shape {
            return Err(Error::IndexMismatch(format!(
                "fit covers {} countries x {} years, dataset {} x {}",
                fit.shape.n, fit.shape.years, self.shape.n, self.shape.years
            )));
        }
        let theta = fit.pair_effects().ok_or_else(|| Error::SpecMismatch("fit has no pair effects".into()))?;
        let mut provenance = Vec::new();
        let size = |covs: &[(String, Vec<T>)], component: &str, provenance: &mut Vec<ProvenanceEntry>| -> Result<Vec<T>> {
            let mut out = vec![T::zero(); self.shape.n * self.shape.years];
            for (name, values) in covs {
                let b = fit.beta(name).ok_or_else(|| Error::MissingCovariate(name.clone()))?;
                out.iter_mut().zip(values).for_each(|(o, &v)| *o += b * v);
                provenance.push(ProvenanceEntry {
                    component: component.into(),
                    covariate: name.clone(),
                    coefficient: b.to_f64_lossy(),
                    source: "fit".into(),
                });
            }
            Ok(out)
        };
        let origin_size = size(&self.origin_covariates, "origin_size", &mut provenance)?;
        let dest_size = size(&self.dest_covariates, "dest_size", &mut provenance)?;

        let e = T::one() - self.sigma;
        let target = DVector::from_iterator(theta.len(), theta.iter().zip(&self.distance).map(|(&th, &d)| th - e * d));
        let coef = self.projection.solve(&target);
        let dummies = 2 * self.shape.n - 1;
        let mut cost = vec![T::zero(); self.shape.pairs()];
        for (k, name) in self.cost_names.iter().enumerate() {
            let loading = match self.kept.iter().position(|&c| c == k) {
                Some(pos) => coef[dummies + pos] / e,
                None => T::zero(),
            };
            cost.iter_mut().zip(&self.cost_values[k]).for_each(|(o, &z)| *o += loading * z);
            provenance.push(ProvenanceEntry {
                component: "cost".into(),
                covariate: name.clone(),
                coefficient: loading.to_f64_lossy(),
                source: "pair_effects".into(),
            });
        }
        provenance.push(ProvenanceEntry {
            component: "distance".into(),
            covariate: "dist".into(),
            coefficient: self.distance_loading.to_f64_lossy(),
            source: self.distance_source.into(),
        });
        let out = StructuralComponents {
            shape: self.shape,
            sigma: self.sigma,
            origin_size,
            dest_size,
            cost,
            distance: self.distance.clone(),
            provenance,
        };
        out.check_finite()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrtOptions {
    pub mode: MrtMode,
    pub domestic: DomesticTrade,
    pub solver: MrtSolver,
}

impl Default for MrtOptions {
    fn default() -> Self {
        Self { mode: MrtMode::Pooled, domestic: DomesticTrade::Excluded, solver: MrtSolver::default() }
    }
}

/// Resistance terms re-solved from estimated components.
#[derive(Debug, Clone)]
pub struct EmpiricalMrt<T> {
    pub mode: MrtMode,
    pub sigma: T,
    /// `ln Pi_hat`, indexed `t * n + i`, for the unshifted cost `T_hat`.
    pub log_pi: Vec<T>,
    /// `ln P_hat`, indexed `t * n + j`.
    pub log_p: Vec<T>,
    /// Log level absorbed by the pair effects: the time average of
    /// `-ln sum_j exp(E_hat_jt)`.
    pub level_offset: T,
    /// Constant added to `ln T_hat` so that every solved cost is at least 1.
    pub cost_shift: T,
    pub solutions: Vec<MrtSolution<T>>,
}

impl<T: Real> EmpiricalMrt<T> {
    pub fn n(&self) -> usize {
        self.solutions.first().map_or(0, |s| s.n())
    }

    /// `ln Pi_hat` averaged over years.
    pub fn mean_log_pi(&self) -> Vec<T> {
        year_mean(&self.log_pi, self.n())
    }

    /// `ln P_hat` averaged over years.
    pub fn mean_log_p(&self) -> Vec<T> {
        year_mean(&self.log_p, self.n())
    }
}

fn year_mean<T: Real>(v: &[T], n: usize) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let years = v.len() / n;
    (0..n).map(|i| (0..years).map(|t| v[t * n + i]).sum::<T>() / T::from_usize_lossy(years)).collect()
}

/// Exponentiates the components into a panel of worlds and solves their
/// resistance terms.
///
/// Output and expenditure keep their relative levels across years; each
/// year's expenditures are rescaled to that year's total output.
pub fn solve_empirical_mrt<T: Real>(components: &StructuralComponents<T>, options: &MrtOptions) -> Result<EmpiricalMrt<T>> {
    components.check_finite()?;
    let sigma = components.sigma;
    if !(sigma > T::one()) {
        return Err(Error::InvalidConfig(format!("sigma = {sigma} must exceed 1")));
    }
    let (n, years) = (components.shape.n, components.shape.years);
    let total_cost = components.total_cost();
    let min_cost = total_cost.iter().copied().fold(T::lit(f64::INFINITY), |a, b| a.min(b));
    let cost_shift = (-min_cost).max(T::zero());
    let diagonal = match options.domestic {
        DomesticTrade::Excluded => T::lit(f64::INFINITY),
        DomesticTrade::Frictionless => cost_shift.exp(),
    };
    let costs = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diagonal
        } else {
            (total_cost[crate::panel::pair_position(n, i, j)] + cost_shift).exp()
        }
    });
    let x_max = components.origin_size.iter().copied().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b));
    let mut level = T::zero();
    let worlds = (0..years)
        .map(|t| {
            let output: Vec<T> = (0..n).map(|i| (components.origin_size_at(i, t) - x_max).exp()).collect();
            let e_max = (0..n).map(|j| components.dest_size_at(j, t)).fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b));
            let raw: Vec<T> = (0..n).map(|j| (components.dest_size_at(j, t) - e_max).exp()).collect();
            let raw_total: T = raw.iter().copied().sum();
            level -= e_max + raw_total.ln();
            let total: T = output.iter().copied().sum();
            let expenditure = raw.iter().map(|&e| e * total / raw_total).collect();
            StructuralWorld::new(sigma, costs.clone(), expenditure, output)
        })
        .collect::<Result<Vec<_>>>()?;
    let solutions = options.solver.solve_panel(&worlds, options.mode)?;
    let mut log_pi = Vec::with_capacity(n * years);
    let mut log_p = Vec::with_capacity(n * years);
    for s in &solutions {
        log_pi.extend(s.pi.iter().map(|&v| v.ln() - cost_shift));
        log_p.extend(s.log_p());
    }
    if log_pi.iter().chain(&log_p).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteComponent("resistance terms".into()));
    }
    Ok(EmpiricalMrt {
        mode: options.mode,
        sigma,
        log_pi,
        log_p,
        level_offset: level / T::from_usize_lossy(years),
        cost_shift,
        solutions,
    })
}

/// Flow-scale structural terms of the pair effects: `theta_ij` is modelled as
/// `outward_i + inward_j + cost_ij`.
#[derive(Debug, Clone)]
pub struct StructuralTerms<T> {
    /// `(sigma - 1) ln Pi_i` averaged over years, plus the level offset.
    pub outward: Vec<T>,
    /// `(sigma - 1) ln P_j` averaged over years.
    pub inward: Vec<T>,
    /// `(1 - sigma) ln T_hat_ij`, by pair position.
    pub cost: Vec<T>,
}

impl<T: Real> StructuralTerms<T> {
    pub fn new(components: &StructuralComponents<T>, mrt: &EmpiricalMrt<T>) -> Self {
        let s1 = components.sigma - T::one();
        Self {
            outward: mrt.mean_log_pi().iter().map(|&v| s1 * v + mrt.level_offset).collect(),
            inward: mrt.mean_log_p().iter().map(|&v| s1 * v).collect(),
            cost: components.total_cost().iter().map(|&c| -s1 * c).collect(),
        }
    }

    /// `outward_i + inward_j + cost_ij` by pair position.
    pub fn combined(&self) -> Vec<T> {
        let n = self.outward.len();
        self.cost
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                let (i, j) = pair_at(n, p);
                self.outward[i] + self.inward[j] + c
            })
            .collect()
    }
}
