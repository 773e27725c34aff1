//! CSV panel ingestion and export.
//!
//! Panel file: `origin,dest,year,flow,<covariates...>` with a mandatory header.
//! Distances come from a companion `origin,dest,dist_km` file or, failing that,
//! from a `dist` column of log kilometres in the panel itself.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;

use super::{CountryIndex, CovariateSchema, Observation, PanelDataset};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Treatment of self-flow rows (`origin == dest`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalPolicy {
    /// Keep them, flagged and excluded from estimation.
    #[default]
    Flag,
    Reject,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    pub distance_file: Option<&'a Path>,
    /// Flows are raw levels; take logs and refuse non-positive values.
    pub log_levels: bool,
    pub diagonal: DiagonalPolicy,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?)
}

fn parse_real<T: Real>(raw: &str, column: &str) -> Result<T> {
    let v: f64 = raw.parse().map_err(|_| Error::InvalidValue {
        column: column.to_string(),
        reason: format!("cannot parse `{raw}` as a number"),
    })?;
    T::from_f64(v).ok_or_else(|| Error::InvalidValue { column: column.into(), reason: "out of range".into() })
}

pub fn load_panel<T: Real>(path: &Path, schema: &CovariateSchema, opts: &LoadOptions<'_>) -> Result<PanelDataset<T>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_origin, c_dest, c_year, c_flow) = (column("origin")?, column("dest")?, column("year")?, column("flow")?);
    let c_covs = schema.names().map(column).collect::<Result<Vec<_>>>()?;
    let c_dist = headers.iter().position(|h| h == "dist");
    if opts.distance_file.is_none() && c_dist.is_none() {
        return Err(Error::MissingColumn("dist".into()));
    }

    struct Raw<T> {
        origin: String,
        dest: String,
        year: i32,
        flow: T,
        covs: Vec<T>,
        log_dist: Option<T>,
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let year: i32 = record[c_year].parse().map_err(|_| Error::InvalidValue {
            column: "year".into(),
            reason: format!("`{}` is not an integer year", &record[c_year]),
        })?;
        let mut flow: T = parse_real(&record[c_flow], "flow")?;
        if opts.log_levels {
            if !(flow > T::zero()) {
                return Err(Error::InvalidValue {
                    column: "flow".into(),
                    reason: format!("non-positive flow for ({}, {}, {year}) in log mode", &record[c_origin], &record[c_dest]),
                });
            }
            flow = flow.ln();
        }
        let covs = c_covs
            .iter()
            .zip(schema.names())
            .map(|(&c, name)| parse_real(&record[c], name))
            .collect::<Result<Vec<T>>>()?;
        let log_dist = c_dist.map(|c| parse_real(&record[c], "dist")).transpose()?;
        rows.push(Raw { origin: record[c_origin].to_string(), dest: record[c_dest].to_string(), year, flow, covs, log_dist });
    }

    let codes: BTreeSet<&str> = rows.iter().flat_map(|r| [r.origin.as_str(), r.dest.as_str()]).collect();
    let index = CountryIndex::new(codes.into_iter().map(String::from).collect())?;
    let years: Vec<i32> = rows.iter().map(|r| r.year).collect::<BTreeSet<_>>().into_iter().collect();
    let n = index.n();

    let distance_km = match opts.distance_file {
        Some(dpath) => load_distance_file(dpath, &index)?,
        None => {
            let mut d = DMatrix::from_element(n, n, T::zero());
            let mut seen = vec![false; n * n];
            for r in &rows {
                let (i, j) = (index.position(&r.origin).unwrap(), index.position(&r.dest).unwrap());
                if i == j {
                    continue;
                }
                let km = r.log_dist.expect("dist column present").exp();
                if seen[i * n + j] && d[(i, j)] != km {
                    return Err(Error::RoleViolation { name: "dist".into(), role: "dyadic".into() });
                }
                seen[i * n + j] = true;
                d[(i, j)] = km;
            }
            d
        }
    };

    let observations = rows
        .into_iter()
        .map(|r| Observation {
            origin: index.position(&r.origin).unwrap(),
            dest: index.position(&r.dest).unwrap(),
            year: r.year,
            flow: r.flow,
            covariates: r.covs,
        })
        .collect();
    PanelDataset::from_observations(index, years, schema.clone(), observations, distance_km, opts.diagonal)
}

fn load_distance_file<T: Real>(path: &Path, index: &CountryIndex) -> Result<DMatrix<T>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (co, cd, ck) = (col("origin")?, col("dest")?, col("dist_km")?);
    let n = index.n();
    let mut d = DMatrix::from_element(n, n, T::zero());
    let mut given: HashMap<(usize, usize), T> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let (Some(i), Some(j)) = (index.position(&record[co]), index.position(&record[cd])) else {
            continue;
        };
        let km: T = parse_real(&record[ck], "dist_km")?;
        if i == j {
            continue;
        }
        if !(km > T::zero()) {
            return Err(Error::NonPositiveDistance(index.code(i).into(), index.code(j).into()));
        }
        given.insert((i, j), km);
    }
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            // One direction suffices; the matrix is symmetric.
            let v = given.get(&(i, j)).or_else(|| given.get(&(j, i))).ok_or_else(|| Error::InvalidValue {
                column: "dist_km".into(),
                reason: format!("no distance for ({}, {})", index.code(i), index.code(j)),
            })?;
            d[(i, j)] = *v;
        }
    }
    Ok(d)
}

/// Writes the panel CSV (stored rows in canonical order, diagonal last).
pub fn write_panel<T: Real>(ds: &PanelDataset<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["origin".to_string(), "dest".into(), "year".into(), "flow".into()];
    header.extend(ds.schema().names().map(String::from));
    w.write_record(&header)?;
    for obs in ds.observations() {
        let mut rec = vec![
            ds.index().code(obs.origin).to_string(),
            ds.index().code(obs.dest).to_string(),
            obs.year.to_string(),
            obs.flow.to_string(),
        ];
        rec.extend(obs.covariates.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the companion `origin,dest,dist_km` file for all ordered pairs.
pub fn write_distances<T: Real>(ds: &PanelDataset<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["origin", "dest", "dist_km"])?;
    let n = ds.n();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            w.write_record([ds.index().code(i), ds.index().code(j), &ds.distance_km()[(i, j)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
