//! Side-by-side coefficient comparison of the models with and without distance.

use std::path::Path;

use super::fit::GravityFit;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One reported coefficient, kept as text so published values survive a round trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientRow {
    pub name: String,
    /// Empty when the coefficient is not estimated (absorbed or excluded).
    pub estimate: String,
    pub se: String,
    pub stars: String,
}

impl CoefficientRow {
    pub fn value(&self) -> Option<f64> {
        self.estimate.parse().ok()
    }

    /// `value (se)stars`, `value stars` without a standard error, `-` when not estimated.
    pub fn cell(&self) -> String {
        if self.estimate.is_empty() {
            return "-".into();
        }
        match (self.se.is_empty(), self.stars.is_empty()) {
            (false, _) => format!("{} ({}){}", self.estimate, self.se, self.stars),
            (true, false) => format!("{} {}", self.estimate, self.stars),
            (true, true) => self.estimate.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
}

impl CoefficientTable {
    /// Full-precision table of a fit; absorbed regressors appear with empty cells
    /// and the spatial coefficient, if any, as `rho`.
    pub fn from_fit<T: Real>(fit: &GravityFit<T>) -> Self {
        let row = |c: &super::fit::Coefficient<T>| CoefficientRow {
            name: c.name.clone(),
            estimate: c.estimate.to_string(),
            se: c.se.to_string(),
            stars: c.stars().to_string(),
        };
        let mut rows = Vec::new();
        for name in &fit.spec.regressors {
            if let Some(c) = fit.coefficients.iter().find(|c| &c.name == name) {
                rows.push(row(c));
            } else if fit.absorbed.contains(name) {
                rows.push(CoefficientRow { name: name.clone(), estimate: String::new(), se: String::new(), stars: String::new() });
            }
        }
        rows.extend(fit.rho.as_ref().map(row));
        Self { rows }
    }

    /// Numeric cells re-printed with `decimals` digits.
    pub fn rounded(&self, decimals: usize) -> Self {
        let fmt = |s: &str| s.parse::<f64>().map(|v| format!("{v:.decimals$}")).unwrap_or_else(|_| s.to_string());
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| CoefficientRow { name: r.name.clone(), estimate: fmt(&r.estimate), se: fmt(&r.se), stars: r.stars.clone() })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&CoefficientRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "estimate", "se", "stars"])?;
        for r in &self.rows {
            w.write_record([&r.name, &r.estimate, &r.se, &r.stars])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()));
        let (c_name, c_est, c_se) = (col("name")?, col("estimate")?, col("se")?);
        let c_stars = headers.iter().position(|h| h == "stars");
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let get = |c: usize| rec.get(c).unwrap_or("").to_string();
            rows.push(CoefficientRow {
                name: get(c_name),
                estimate: get(c_est),
                se: get(c_se),
                stars: c_stars.map(get).unwrap_or_default(),
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub without: Option<CoefficientRow>,
    pub with: Option<CoefficientRow>,
}

impl ComparisonRow {
    /// With-distance minus without-distance estimate, when both are estimated.
    pub fn delta(&self) -> Option<f64> {
        Some(self.with.as_ref()?.value()? - self.without.as_ref()?.value()?)
    }

    pub fn sign_agrees(&self) -> Option<bool> {
        let (a, b) = (self.without.as_ref()?.value()?, self.with.as_ref()?.value()?);
        Some(a.signum() == b.signum())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Compares two fits of the same panel that differ only in the distance
/// regressor (and the fixed effects that distance forces).
pub fn compare_specs<T: Real>(fit_with: &GravityFit<T>, fit_without: &GravityFit<T>) -> Result<Comparison> {
    if fit_with.shape != fit_without.shape {
        return Err(Error::IncomparableSpecs("fits come from panels of different shape".into()));
    }
    if !fit_with.spec.include_distance || fit_without.spec.include_distance {
        return Err(Error::IncomparableSpecs("expected one fit with distance and one without".into()));
    }
    if !fit_with.spec.differs_only_in_distance(&fit_without.spec) {
        return Err(Error::IncomparableSpecs("specifications differ beyond the distance regressor".into()));
    }
    Ok(compare_tables(&CoefficientTable::from_fit(fit_without), &CoefficientTable::from_fit(fit_with)))
}

/// Aligns two tables on the ordered union of their row names. Rows only in
/// `with` are placed after their predecessor in `with`.
pub fn compare_tables(without: &CoefficientTable, with: &CoefficientTable) -> Comparison {
    let mut names: Vec<String> = without.rows.iter().map(|r| r.name.clone()).collect();
    let mut anchor: Option<usize> = None;
    for r in &with.rows {
        match names.iter().position(|n| n == &r.name) {
            Some(k) => anchor = Some(k),
            None => {
                let at = anchor.map_or(0, |k| k + 1);
                names.insert(at, r.name.clone());
                anchor = Some(at);
            }
        }
    }
    Comparison {
        rows: names
            .into_iter()
            .map(|name| ComparisonRow { without: without.get(&name).cloned(), with: with.get(&name).cloned(), name })
            .collect(),
    }
}

/// Plain-text side-by-side table: variable, model without distance, model with distance.
pub fn render_table1(cmp: &Comparison) -> String {
    let cell = |r: &Option<CoefficientRow>| r.as_ref().map_or_else(|| "-".to_string(), CoefficientRow::cell);
    let mut lines = vec![["VARIABLE".to_string(), "without distance (*)".to_string(), "with distance".to_string()]];
    lines.extend(cmp.rows.iter().map(|r| [r.name.clone(), cell(&r.without), cell(&r.with)]));
    let width = |k: usize| lines.iter().map(|l| l[k].chars().count()).max().unwrap_or(0);
    let (w0, w1) = (width(0), width(1));
    let mut out = String::new();
    for l in &lines {
        out.push_str(&format!("{:<w0$} | {:<w1$} | {}\n", l[0], l[1], l[2]));
    }
    out.push_str("* In brackets the standard error\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, est: &str, se: &str, stars: &str) -> CoefficientRow {
        CoefficientRow { name: name.into(), estimate: est.into(), se: se.into(), stars: stars.into() }
    }

    #[test]
    fn cells_follow_the_report_convention() {
        assert_eq!(row("a", "1.297", "0.033", "***").cell(), "1.297 (0.033)***");
        assert_eq!(row("rho", "0.00055", "", "***").cell(), "0.00055 ***");
        assert_eq!(row("a", "", "", "").cell(), "-");
        assert_eq!(row("a", "0.395", "0.029", "").cell(), "0.395 (0.029)");
    }

    #[test]
    fn union_keeps_relative_order() {
        let without = CoefficientTable { rows: vec![row("a", "1", "", ""), row("b", "2", "", ""), row("rho", "3", "", "")] };
        let with = CoefficientTable { rows: vec![row("a", "1", "", ""), row("b", "2", "", ""), row("dist", "-1", "", ""), row("rho", "3", "", "")] };
        let cmp = compare_tables(&without, &with);
        let names: Vec<_> = cmp.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "dist", "rho"]);
        assert_eq!(cmp.rows[2].without, None);
        assert_eq!(cmp.rows[0].delta(), Some(0.0));
    }
}
