//! Dyadic panel data: country index, covariate schema, and the balanced
//! origin-destination-year dataset shared by every estimator.

mod design;
mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use design::{build_design, DesignBundle, DyadicPolicy, Factor, FactorKind, ModelSpec, PairEffects};
pub use io::{load_panel, write_distances, write_panel, DiagonalPolicy, LoadOptions};

/// Ordered, unique country codes. Positions are stable for the lifetime of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryIndex {
    codes: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl CountryIndex {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        if codes.len() < 2 {
            return Err(Error::InvalidValue {
                column: "origin".into(),
                reason: format!("need at least 2 countries, found {}", codes.len()),
            });
        }
        let mut lookup = HashMap::with_capacity(codes.len());
        for (pos, code) in codes.iter().enumerate() {
            if lookup.insert(code.clone(), pos).is_some() {
                return Err(Error::InvalidValue {
                    column: "origin".into(),
                    reason: format!("duplicate country code `{code}`"),
                });
            }
        }
        Ok(Self { codes, lookup })
    }

    /// Generated codes `C00, C01, ...`.
    pub fn synthetic(n: usize) -> Result<Self> {
        let width = if n > 100 { 3 } else { 2 };
        Self::new((0..n).map(|i| format!("C{i:0width$}")).collect())
    }

    pub fn n(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn code(&self, pos: usize) -> &str {
        &self.codes[pos]
    }

    pub fn position(&self, code: &str) -> Option<usize> {
        self.lookup.get(code).copied()
    }
}

/// Along which panel dimension a covariate varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variation {
    /// Varies with (origin, year).
    Origin,
    /// Varies with (destination, year).
    Dest,
    /// Varies with the ordered pair, constant over years.
    Dyadic,
    /// Varies with (origin, destination, year).
    DyadicTime,
}

/// Structural component a covariate loads on, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    None,
    /// Origin or destination economic size index.
    Size,
    /// Non-transport bilateral trade cost.
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Role {
    pub variation: Variation,
    pub component: Component,
}

impl Role {
    pub const fn new(variation: Variation, component: Component) -> Self {
        Self { variation, component }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.variation {
            Variation::Origin => "origin",
            Variation::Dest => "dest",
            Variation::Dyadic => "dyadic",
            Variation::DyadicTime => "dyadic_time",
        };
        match self.component {
            Component::None => write!(f, "{base}"),
            Component::Size => write!(f, "{base}:size"),
            Component::Cost => write!(f, "{base}:cost"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, comp) = match s.split_once(':') {
            Some((b, c)) => (b.trim(), Some(c.trim())),
            None => (s.trim(), None),
        };
        let variation = match base {
            "origin" => Variation::Origin,
            "dest" => Variation::Dest,
            "dyadic" => Variation::Dyadic,
            "dyadic_time" => Variation::DyadicTime,
            other => return Err(Error::Parse(format!("unknown role `{other}`"))),
        };
        let component = match (variation, comp) {
            (_, None) => Component::None,
            (Variation::Origin | Variation::Dest, Some("size")) => Component::Size,
            (Variation::Dyadic, Some("cost")) => Component::Cost,
            (_, Some(c)) => return Err(Error::Parse(format!("role `{base}` cannot carry component `{c}`"))),
        };
        Ok(Role { variation, component })
    }
}

/// Ordered covariate declaration. Serialized as a flat `name = "role"` TOML table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CovariateSchema {
    entries: Vec<(String, Role)>,
}

/// Column names with fixed meaning that may not be declared as covariates.
pub const RESERVED_COLUMNS: [&str; 5] = ["origin", "dest", "year", "flow", "dist"];

impl CovariateSchema {
    pub fn new(entries: Vec<(String, Role)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &entries {
            if RESERVED_COLUMNS.contains(&name.as_str()) || name.starts_with("W:") {
                return Err(Error::InvalidSpec(format!("`{name}` is a reserved column name")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpec(format!("covariate `{name}` declared twice")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Role)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, r)| *r)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut entries = Vec::with_capacity(table.len());
        for (name, value) in table {
            let role = value
                .as_str()
                .ok_or_else(|| Error::Parse(format!("role of `{name}` must be a string")))?
                .parse()?;
            entries.push((name, role));
        }
        Self::new(entries)
    }

    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::new();
        for (name, role) in &self.entries {
            table.insert(name.clone(), toml::Value::String(role.to_string()));
        }
        toml::to_string(&table).expect("flat string table serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }
}

/// One row of the panel file.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub origin: usize,
    pub dest: usize,
    pub year: i32,
    pub flow: T,
    /// Values in schema order.
    pub covariates: Vec<T>,
}

/// Balanced dyadic panel. Values are stored on the full `T × n × n` grid in
/// year-major, origin, destination order; diagonal cells are kept when
/// supplied but never enter an estimation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<T> {
    index: CountryIndex,
    years: Vec<i32>,
    schema: CovariateSchema,
    flows: Vec<T>,
    covariates: Vec<Vec<T>>,
    diagonal: Vec<bool>,
    distance_km: DMatrix<T>,
    log_distance: DMatrix<T>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct PanelShape {
    pub n: usize,
    pub years: usize,
}

impl PanelShape {
    pub fn pairs(&self) -> usize {
        self.n * (self.n - 1)
    }

    pub fn rows(&self) -> usize {
        self.pairs() * self.years
    }
}

impl<T: Real> PanelDataset<T> {
    /// Validates and assembles a dataset. `distance_km` must be symmetric with
    /// zero diagonal and positive off-diagonal entries.
    pub fn from_observations(
        index: CountryIndex,
        mut years: Vec<i32>,
        schema: CovariateSchema,
        observations: Vec<Observation<T>>,
        distance_km: DMatrix<T>,
        diagonal_policy: DiagonalPolicy,
    ) -> Result<Self> {
        let n = index.n();
        years.sort_unstable();
        years.dedup();
        if years.is_empty() {
            return Err(Error::InvalidValue { column: "year".into(), reason: "no years".into() });
        }
        let year_pos: HashMap<i32, usize> = years.iter().enumerate().map(|(k, &y)| (y, k)).collect();
        let cells = years.len() * n * n;
        let k = schema.len();
        let mut flows = vec![T::zero(); cells];
        let mut covariates = vec![vec![T::zero(); cells]; k];
        let mut seen = vec![false; cells];

        for obs in observations {
            if obs.covariates.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: obs.covariates.len() });
            }
            let t = *year_pos.get(&obs.year).ok_or_else(|| Error::InvalidValue {
                column: "year".into(),
                reason: format!("year {} not declared", obs.year),
            })?;
            if obs.origin >= n || obs.dest >= n {
                return Err(Error::IndexMismatch(format!("country position out of range for n = {n}")));
            }
            if obs.origin == obs.dest && diagonal_policy == DiagonalPolicy::Reject {
                return Err(Error::InvalidValue {
                    column: "dest".into(),
                    reason: format!("self-flow for `{}` in {}", index.code(obs.origin), obs.year),
                });
            }
            let cell = (t * n + obs.origin) * n + obs.dest;
            if seen[cell] {
                return Err(Error::DuplicateObservation(
                    index.code(obs.origin).to_string(),
                    index.code(obs.dest).to_string(),
                    obs.year,
                ));
            }
            if !obs.flow.is_finite() {
                return Err(Error::InvalidValue { column: "flow".into(), reason: "non-finite value".into() });
            }
            seen[cell] = true;
            flows[cell] = obs.flow;
            for (c, v) in obs.covariates.into_iter().enumerate() {
                covariates[c][cell] = v;
            }
        }

        let mut missing = Vec::new();
        for (t, &year) in years.iter().enumerate() {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    if !seen[(t * n + i) * n + j] {
                        missing.push((index.code(i).to_string(), index.code(j).to_string(), year));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnbalancedPanel { missing });
        }
        let diagonal = (0..years.len() * n).map(|ti| seen[ti * n + ti % n]).collect();

        let log_distance = validate_distances(&index, &distance_km)?;
        let ds = Self { index, years, schema, flows, covariates, diagonal, distance_km, log_distance };
        ds.validate_roles()?;
        Ok(ds)
    }

    fn validate_roles(&self) -> Result<()> {
        let (n, nt) = (self.n(), self.n_years());
        for (c, (name, role)) in self.schema.entries().iter().enumerate() {
            let col = &self.covariates[c];
            let violation = || Error::RoleViolation { name: name.clone(), role: role.to_string() };
            for t in 0..nt {
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        let v = col[self.cell(i, j, t)];
                        if !v.is_finite() {
                            return Err(Error::InvalidValue { column: name.clone(), reason: "non-finite value".into() });
                        }
                        let reference = match role.variation {
                            Variation::Origin => col[self.cell(i, first_other(i, n), t)],
                            Variation::Dest => col[self.cell(first_other(j, n), j, t)],
                            Variation::Dyadic => col[self.cell(i, j, 0)],
                            Variation::DyadicTime => v,
                        };
                        if v != reference {
                            return Err(violation());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn cell(&self, i: usize, j: usize, t: usize) -> usize {
        (t * self.n() + i) * self.n() + j
    }

    pub fn index(&self) -> &CountryIndex {
        &self.index
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.index.n()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn shape(&self) -> PanelShape {
        PanelShape { n: self.n(), years: self.n_years() }
    }

    /// Ordered pairs `(i, j)`, `i != j`.
    pub fn n_pairs(&self) -> usize {
        self.shape().pairs()
    }

    /// Size of the estimation sample, `n (n - 1) T`.
    pub fn n_estimation_rows(&self) -> usize {
        self.shape().rows()
    }

    /// Number of stored rows including flagged diagonal cells.
    pub fn n_stored_rows(&self) -> usize {
        self.n_estimation_rows() + self.n_diagonal_rows()
    }

    pub fn n_diagonal_rows(&self) -> usize {
        self.diagonal.iter().filter(|&&d| d).count()
    }

    pub fn flow(&self, i: usize, j: usize, t: usize) -> T {
        self.flows[self.cell(i, j, t)]
    }

    /// Stored diagonal flow, if that row was supplied.
    pub fn diagonal_flow(&self, i: usize, t: usize) -> Option<T> {
        self.diagonal[t * self.n() + i].then(|| self.flows[self.cell(i, i, t)])
    }

    pub fn covariate(&self, c: usize, i: usize, j: usize, t: usize) -> T {
        self.covariates[c][self.cell(i, j, t)]
    }

    /// Value of an origin-level covariate for country `i` in year position `t`.
    pub fn origin_value(&self, c: usize, i: usize, t: usize) -> T {
        self.covariate(c, i, first_other(i, self.n()), t)
    }

    /// Value of a destination-level covariate for country `j` in year position `t`.
    pub fn dest_value(&self, c: usize, j: usize, t: usize) -> T {
        self.covariate(c, first_other(j, self.n()), j, t)
    }

    pub fn distance_km(&self) -> &DMatrix<T> {
        &self.distance_km
    }

    /// Log great-circle distance; zero on the diagonal.
    pub fn log_distance(&self) -> &DMatrix<T> {
        &self.log_distance
    }

    /// Estimation-sample position of ordered pair `(i, j)`.
    pub fn pair_position(&self, i: usize, j: usize) -> usize {
        pair_position(self.n(), i, j)
    }

    pub fn pair_at(&self, p: usize) -> (usize, usize) {
        pair_at(self.n(), p)
    }

    /// Estimation-sample flows in canonical order (year-major, then pair order).
    pub fn response(&self) -> Vec<T> {
        self.estimation_column(&self.flows)
    }

    /// Estimation-sample values of a schema covariate.
    pub fn covariate_column(&self, c: usize) -> Vec<T> {
        self.estimation_column(&self.covariates[c])
    }

    /// Log distance repeated over years in estimation order.
    pub fn distance_column(&self) -> Vec<T> {
        let n = self.n();
        let per_year: Vec<T> = (0..self.n_pairs())
            .map(|p| {
                let (i, j) = pair_at(n, p);
                self.log_distance[(i, j)]
            })
            .collect();
        per_year.iter().copied().cycle().take(self.n_estimation_rows()).collect()
    }

    fn estimation_column(&self, grid: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_estimation_rows());
        for t in 0..self.n_years() {
            for p in 0..self.n_pairs() {
                let (i, j) = self.pair_at(p);
                out.push(grid[self.cell(i, j, t)]);
            }
        }
        out
    }

    /// Copy with the estimation-sample flows replaced by `response`
    /// (canonical order). Diagonal cells are untouched.
    pub fn with_response(&self, response: &[T]) -> Result<Self> {
        if response.len() != self.n_estimation_rows() {
            return Err(Error::DimensionMismatch { expected: self.n_estimation_rows(), found: response.len() });
        }
        let mut out = self.clone();
        let pairs = self.n_pairs();
        for (r, &v) in response.iter().enumerate() {
            let (i, j) = self.pair_at(r % pairs);
            let cell = self.cell(i, j, r / pairs);
            out.flows[cell] = v;
        }
        Ok(out)
    }

    /// All stored rows: off-diagonal cells in canonical order, then flagged diagonal cells.
    pub fn observations(&self) -> impl Iterator<Item = Observation<T>> + '_ {
        let n = self.n();
        let off = (0..self.n_estimation_rows()).map(move |r| {
            let (i, j) = pair_at(n, r % self.n_pairs());
            self.observation_at(i, j, r / self.n_pairs())
        });
        let diag = (0..self.n_years() * n)
            .filter(move |&ti| self.diagonal[ti])
            .map(move |ti| self.observation_at(ti % n, ti % n, ti / n));
        off.chain(diag)
    }

    fn observation_at(&self, i: usize, j: usize, t: usize) -> Observation<T> {
        let cell = self.cell(i, j, t);
        Observation {
            origin: i,
            dest: j,
            year: self.years[t],
            flow: self.flows[cell],
            covariates: self.covariates.iter().map(|col| col[cell]).collect(),
        }
    }
}

fn first_other(i: usize, n: usize) -> usize {
    debug_assert!(n >= 2);
    if i == 0 {
        1
    } else {
        0
    }
}

/// Canonical position of ordered pair `(i, j)` among the `n (n - 1)` off-diagonal pairs.
#[inline]
pub fn pair_position(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

#[inline]
pub fn pair_at(n: usize, p: usize) -> (usize, usize) {
    let i = p / (n - 1);
    let r = p % (n - 1);
    (i, if r < i { r } else { r + 1 })
}

fn validate_distances<T: Real>(index: &CountryIndex, d: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = index.n();
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: d.nrows() });
    }
    let mut logs = DMatrix::zeros(n, n);
    for i in 0..n {
        if d[(i, i)] != T::zero() {
            return Err(Error::AsymmetricInput);
        }
        for j in (0..n).filter(|&j| j != i) {
            let v = d[(i, j)];
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::NonPositiveDistance(index.code(i).into(), index.code(j).into()));
            }
            if v != d[(j, i)] {
                return Err(Error::AsymmetricInput);
            }
            logs[(i, j)] = v.ln();
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_positions_roundtrip() {
        for n in 2..7 {
            for p in 0..n * (n - 1) {
                let (i, j) = pair_at(n, p);
                assert_ne!(i, j);
                assert_eq!(pair_position(n, i, j), p);
            }
        }
    }

    #[test]
    fn roles_parse_and_print() {
        for s in ["origin", "origin:size", "dest:size", "dyadic", "dyadic:cost", "dyadic_time"] {
            let r: Role = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("dyadic:size".parse::<Role>().is_err());
        assert!("country".parse::<Role>().is_err());
    }

    #[test]
    fn schema_rejects_reserved_and_duplicates() {
        let role = Role::new(Variation::Dyadic, Component::Cost);
        assert!(CovariateSchema::new(vec![("dist".into(), role)]).is_err());
        assert!(CovariateSchema::new(vec![("a".into(), role), ("a".into(), role)]).is_err());
    }

    #[test]
    fn schema_toml_preserves_order() {
        let text = "gdp_o = \"origin:size\"\npop_d = \"dest:size\"\ncontig = \"dyadic:cost\"\nmigrat = \"dyadic_time\"\n";
        let schema = CovariateSchema::from_toml_str(text).unwrap();
        assert_eq!(schema.names().collect::<Vec<_>>(), ["gdp_o", "pop_d", "contig", "migrat"]);
        assert_eq!(CovariateSchema::from_toml_str(&schema.to_toml_string()).unwrap(), schema);
    }

    #[test]
    fn country_index_requires_two_unique_codes() {
        assert!(CountryIndex::new(vec!["FRA".into()]).is_err());
        assert!(CountryIndex::new(vec!["FRA".into(), "FRA".into()]).is_err());
        let idx = CountryIndex::new(vec!["DEU".into(), "FRA".into()]).unwrap();
        assert_eq!(idx.position("FRA"), Some(1));
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    fn wiggle(k: usize) -> f64 {
        ((k as f64 * 12.9898).sin() * 43758.5453).fract()
    }

    /// Small deterministic dataset with one covariate of each variation.
    pub(crate) fn tiny_dataset(index: CountryIndex, years: usize) -> PanelDataset<f64> {
        let n = index.n();
        let schema = CovariateSchema::from_toml_str(
            "gdp_o = \"origin:size\"\ngdp_d = \"dest:size\"\ncontig = \"dyadic:cost\"\ntariff = \"dyadic_time\"\n",
        )
        .unwrap();
        let mut obs = Vec::new();
        for t in 0..years {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let k = (t * n + i) * n + j;
                    obs.push(Observation {
                        origin: i,
                        dest: j,
                        year: 2000 + t as i32,
                        flow: wiggle(k) * 4.0,
                        covariates: vec![wiggle(1000 + t * n + i), wiggle(2000 + t * n + j), f64::from((i + j) % 2 == 0), wiggle(3000 + k)],
                    });
                }
            }
        }
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 100.0 * (1.0 + (i + j) as f64) });
        PanelDataset::from_observations(index, (0..years).map(|t| 2000 + t as i32).collect(), schema, obs, d, DiagonalPolicy::Reject)
            .unwrap()
    }
}
