use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{pair_at, PanelDataset, PanelShape, Variation};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spatial::{FlowWeight, WeightSpec};

/// Pair fixed-effect structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairEffects {
    None,
    /// One effect per ordered pair, `theta_ij != theta_ji`.
    #[default]
    Directional,
    /// One effect per unordered pair.
    Symmetric,
}

/// What to do with regressors that are constant within pairs when pair
/// effects are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DyadicPolicy {
    #[default]
    Error,
    /// Drop them from the design and record the absorption.
    Absorb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Regressor names: schema covariates, `dist`, or `W:<covariate>` for a
    /// spatially lagged covariate.
    pub regressors: Vec<String>,
    pub include_distance: bool,
    pub pair_effects: PairEffects,
    /// Origin and destination country effects.
    pub country_effects: bool,
    pub time_effects: bool,
    /// Include the spatial lag of the response (SAR model).
    pub spatial: bool,
    /// Weights for the spatial lag and for `W:` regressors.
    pub weights: Option<WeightSpec>,
    /// Highest power of the weight operator used as instrument (1 or 2).
    pub instrument_order: usize,
    pub dyadic_policy: DyadicPolicy,
}

impl ModelSpec {
    /// Gravity model without distance: every covariate, directional pair
    /// effects, time effects; pair-constant covariates are absorbed.
    pub fn without_distance<T: Real>(ds: &PanelDataset<T>) -> Self {
        Self {
            regressors: ds.schema().names().map(String::from).collect(),
            include_distance: false,
            pair_effects: PairEffects::Directional,
            country_effects: false,
            time_effects: true,
            spatial: false,
            weights: None,
            instrument_order: 1,
            dyadic_policy: DyadicPolicy::Absorb,
        }
    }

    /// Gravity model with distance: every covariate plus `dist`, origin and
    /// destination country effects, time effects.
    pub fn with_distance<T: Real>(ds: &PanelDataset<T>) -> Self {
        let mut regressors: Vec<String> = ds.schema().names().map(String::from).collect();
        regressors.push("dist".into());
        Self {
            regressors,
            include_distance: true,
            pair_effects: PairEffects::None,
            country_effects: true,
            time_effects: true,
            spatial: false,
            weights: None,
            instrument_order: 1,
            dyadic_policy: DyadicPolicy::Error,
        }
    }

    /// Turns the model into its SAR variant with the given weights.
    pub fn spatial(mut self, weights: WeightSpec) -> Self {
        self.spatial = true;
        self.weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let has_dist = self.regressors.iter().any(|r| r == "dist");
        if self.include_distance != has_dist {
            return Err(Error::InvalidSpec(format!(
                "include_distance = {} but `dist` {} among the regressors",
                self.include_distance,
                if has_dist { "is" } else { "is not" }
            )));
        }
        if self.pair_effects != PairEffects::None && self.country_effects {
            return Err(Error::InvalidSpec("country effects are nested in pair effects".into()));
        }
        if self.spatial && self.weights.is_none() {
            return Err(Error::InvalidSpec("spatial model without a weight specification".into()));
        }
        if self.spatial && !(1..=2).contains(&self.instrument_order) {
            return Err(Error::InvalidSpec(format!("instrument order {} not in {{1, 2}}", self.instrument_order)));
        }
        Ok(())
    }

    /// True when both specifications describe the same model apart from the
    /// distance regressor and the fixed-effect structure.
    pub fn differs_only_in_distance(&self, other: &ModelSpec) -> bool {
        let strip = |s: &ModelSpec| s.regressors.iter().filter(|r| *r != "dist").cloned().collect::<Vec<_>>();
        strip(self) == strip(other) && self.time_effects == other.time_effects && self.spatial == other.spatial
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Pair,
    SymmetricPair,
    Origin,
    Dest,
    Time,
    /// Single group; stands in for the intercept when no other effects are requested.
    Constant,
}

/// A dummy block described by its group label per estimation row.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub groups: Vec<usize>,
    pub n_groups: usize,
}

impl Factor {
    fn new(kind: FactorKind, shape: PanelShape) -> Self {
        let n = shape.n;
        let pairs = shape.pairs();
        let sym_id = |i: usize, j: usize| {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            // position of (a, b), a < b, in row-major upper-triangle order
            a * (2 * n - a - 1) / 2 + (b - a - 1)
        };
        let groups = (0..shape.rows())
            .map(|r| {
                let (i, j) = pair_at(n, r % pairs);
                match kind {
                    FactorKind::Pair => r % pairs,
                    FactorKind::SymmetricPair => sym_id(i, j),
                    FactorKind::Origin => i,
                    FactorKind::Dest => j,
                    FactorKind::Time => r / pairs,
                    FactorKind::Constant => 0,
                }
            })
            .collect();
        let n_groups = match kind {
            FactorKind::Pair => pairs,
            FactorKind::SymmetricPair => pairs / 2,
            FactorKind::Origin | FactorKind::Dest => n,
            FactorKind::Time => shape.years,
            FactorKind::Constant => 1,
        };
        Self { kind, groups, n_groups }
    }
}

/// Response, regressor matrix and fixed-effect descriptors for one model.
/// Rows follow the canonical estimation order (year-major, then pair).
#[derive(Debug, Clone)]
pub struct DesignBundle<T: Real> {
    pub shape: PanelShape,
    pub response: DVector<T>,
    pub regressors: DMatrix<T>,
    pub names: Vec<String>,
    /// Requested regressors dropped because pair effects absorb them.
    pub absorbed: Vec<String>,
    pub factors: Vec<Factor>,
}

impl<T: Real> DesignBundle<T> {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    /// Rank of the dummy blocks; the factors here are always connected.
    pub fn absorbed_dof(&self) -> usize {
        if self.factors.is_empty() {
            return 0;
        }
        self.factors.iter().map(|f| f.n_groups).sum::<usize>() - (self.factors.len() - 1)
    }

    pub fn column(&self, name: &str) -> Option<Vec<T>> {
        self.names.iter().position(|n| n == name).map(|c| self.regressors.column(c).iter().copied().collect())
    }
}

pub fn build_design<T: Real>(ds: &PanelDataset<T>, spec: &ModelSpec, lag: Option<&FlowWeight<T>>) -> Result<DesignBundle<T>> {
    spec.validate()?;
    let shape = ds.shape();
    let pair_fe = spec.pair_effects != PairEffects::None;

    let mut names = Vec::new();
    let mut absorbed = Vec::new();
    let mut collinear = Vec::new();
    let mut columns: Vec<Vec<T>> = Vec::new();
    for name in &spec.regressors {
        let (pair_constant, column) = if name == "dist" {
            (true, ds.distance_column())
        } else if let Some(base) = name.strip_prefix("W:") {
            let c = ds.schema().position(base).ok_or_else(|| Error::UnknownRegressor(name.clone()))?;
            let fw = lag.ok_or_else(|| Error::InvalidSpec(format!("`{name}` needs a spatial weight matrix")))?;
            let role = ds.schema().entries()[c].1;
            (role.variation == Variation::Dyadic, fw.lag_panel(&ds.covariate_column(c))?)
        } else {
            let c = ds.schema().position(name).ok_or_else(|| Error::UnknownRegressor(name.clone()))?;
            let role = ds.schema().entries()[c].1;
            (role.variation == Variation::Dyadic, ds.covariate_column(c))
        };
        if pair_fe && pair_constant {
            match spec.dyadic_policy {
                DyadicPolicy::Error => collinear.push(name.clone()),
                DyadicPolicy::Absorb => absorbed.push(name.clone()),
            }
            continue;
        }
        names.push(name.clone());
        columns.push(column);
    }
    if !collinear.is_empty() {
        return Err(Error::CollinearDummySpec(collinear));
    }

    let rows = shape.rows();
    let regressors = DMatrix::from_fn(rows, columns.len(), |r, c| columns[c][r]);
    let mut factors = Vec::new();
    match spec.pair_effects {
        PairEffects::Directional => factors.push(Factor::new(FactorKind::Pair, shape)),
        PairEffects::Symmetric => factors.push(Factor::new(FactorKind::SymmetricPair, shape)),
        PairEffects::None => {}
    }
    if spec.country_effects {
        factors.push(Factor::new(FactorKind::Origin, shape));
        factors.push(Factor::new(FactorKind::Dest, shape));
    }
    if spec.time_effects {
        factors.push(Factor::new(FactorKind::Time, shape));
    }
    if factors.is_empty() {
        factors.push(Factor::new(FactorKind::Constant, shape));
    }
    Ok(DesignBundle { shape, response: DVector::from_vec(ds.response()), regressors, names, absorbed, factors })
}
