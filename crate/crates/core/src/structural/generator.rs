//! Synthetic panels drawn from the structural model with known parameters.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DomesticTrade, MrtMode, MrtSolution, MrtSolver, StructuralWorld};
use crate::error::{Error, Result};
use crate::panel::{pair_at, CountryIndex, CovariateSchema, DiagonalPolicy, Observation, PanelDataset};
use crate::rng::{substream, Stream};
use crate::scalar::Real;
use crate::spatial::{distances_from_coordinates, FlowWeight, WeightSpec};

const SIZE_STREAM: u64 = 1 << 20;
const COST_STREAM: u64 = 2 << 20;
const NOISE_STREAM: u64 = 3 << 20;
const MAX_SIZE_DRAWS: usize = 1000;
const MAX_CONCENTRATION: f64 = 0.9;

pub const SIZE_COVARIATES: [&str; 3] = ["pop", "gdp", "ppp"];
pub const COST_DUMMIES: [&str; 3] = ["contig", "comlang", "comcur"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub countries: usize,
    pub years: usize,
    pub first_year: i32,
    pub sigma: f64,
    /// Spatial autoregressive coefficient of the flow equation.
    pub rho: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Loadings of log output on `(pop, gdp, ppp)`.
    pub origin_size: [f64; 3],
    /// Loadings of log expenditure on `(pop, gdp, ppp)`.
    pub dest_size: [f64; 3],
    /// Elasticity of the trade cost to distance.
    pub distance_elasticity: f64,
    /// Log trade-cost effects of `(contig, comlang, comcur)` before calibration.
    pub cost_dummies: [f64; 3],
    /// Share of log trade-cost variance due to distance; zero keeps the raw effects.
    pub distance_share: f64,
    /// Standard deviation of an unobserved, time-varying bilateral cost.
    pub tv_cost_sd: f64,
    /// Standard deviation of the yearly shocks to `(pop, gdp, ppp)`.
    pub size_shock_sd: f64,
    pub mrt_mode: MrtMode,
    pub domestic: DomesticTrade,
    pub weights: WeightSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            countries: 15,
            years: 8,
            first_year: 1988,
            sigma: 4.0,
            rho: 0.0,
            noise_sd: 0.05,
            seed: 1,
            origin_size: [0.8, 1.0, 0.3],
            dest_size: [0.7, 0.9, 0.2],
            distance_elasticity: 1.0,
            cost_dummies: [-0.6, -0.4, -0.5],
            distance_share: 0.21,
            tv_cost_sd: 0.0,
            size_shock_sd: 0.2,
            mrt_mode: MrtMode::Pooled,
            domestic: DomesticTrade::Excluded,
            weights: WeightSpec::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.countries < 3 {
            return bad(format!("countries = {} (need at least 3)", self.countries));
        }
        if self.years == 0 {
            return bad("years = 0".into());
        }
        if !(self.sigma > 1.0) || !self.sigma.is_finite() {
            return bad(format!("sigma = {} must exceed 1", self.sigma));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("rho = {} violates the stationarity bound |rho| < 1", self.rho));
        }
        if !(self.noise_sd >= 0.0) || !(self.tv_cost_sd >= 0.0) || !(self.size_shock_sd >= 0.0) {
            return bad("standard deviations must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.distance_share) {
            return bad(format!("distance_share = {} not in [0, 1)", self.distance_share));
        }
        if !(self.distance_elasticity > 0.0) {
            return bad("distance_elasticity must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Latent quantities behind a synthetic panel (all on the `f64` scale).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    /// Centroids `(lat, lon)` in degrees.
    pub coordinates: Vec<(f64, f64)>,
    /// Multiplier applied to the raw dummy effects to reach the distance share.
    pub cost_scale: f64,
    /// Constant added to every log trade cost so that `T >= 1`.
    pub cost_shift: f64,
    /// Time-invariant part of `ln T_ij` (shift included), by pair position.
    pub base_log_cost: Vec<f64>,
    /// Full `ln T_ijt`, canonical estimation order.
    pub log_cost: Vec<f64>,
    /// `X_it`, indexed `[t][i]`.
    pub output: Vec<Vec<f64>>,
    /// `E_jt`, indexed `[t][j]`.
    pub expenditure: Vec<Vec<f64>>,
    pub worlds: Vec<StructuralWorld<f64>>,
    pub mrt: Vec<MrtSolution<f64>>,
    /// Structural log flow, canonical order.
    pub structural: Vec<f64>,
    pub noise: Vec<f64>,
    /// `W y` for the generated response.
    pub spatial_lag: Vec<f64>,
}

impl GroundTruth {
    /// True coefficients on the log-trade-cost scale.
    pub fn cost_coefficients(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            COST_DUMMIES.iter().zip(self.config.cost_dummies).map(|(n, c)| (n.to_string(), self.cost_scale * c)).collect();
        out.push(("dist".into(), self.config.distance_elasticity));
        out
    }

    /// True coefficients of the log-flow equation, named as in the dataset.
    pub fn flow_coefficients(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, n) in SIZE_COVARIATES.iter().enumerate() {
            out.push((format!("{n}_o"), self.config.origin_size[k]));
        }
        for (k, n) in SIZE_COVARIATES.iter().enumerate() {
            out.push((format!("{n}_d"), self.config.dest_size[k]));
        }
        let e = 1.0 - self.config.sigma;
        out.extend(self.cost_coefficients().into_iter().map(|(n, c)| (n, e * c)));
        out
    }

    pub fn flow_coefficient(&self, name: &str) -> Option<f64> {
        self.flow_coefficients().into_iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Writes `mrt_truth.csv`, `tradecost_truth.csv`, `sizes_truth.csv` (and
    /// `tradecost_tv_truth.csv` with time-varying costs) into `dir`.
    pub fn write_sidecars(&self, index: &CountryIndex, years: &[i32], dir: &Path) -> Result<()> {
        let n = index.n();
        let mut w = csv::Writer::from_path(dir.join("mrt_truth.csv"))?;
        w.write_record(["country", "year", "Pi", "P"])?;
        for (t, m) in self.mrt.iter().enumerate() {
            for i in 0..n {
                w.write_record([index.code(i), &years[t].to_string(), &m.pi[i].to_string(), &m.p[i].to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("tradecost_truth.csv"))?;
        w.write_record(["origin", "dest", "T"])?;
        for (p, c) in self.base_log_cost.iter().enumerate() {
            let (i, j) = pair_at(n, p);
            w.write_record([index.code(i), index.code(j), &c.exp().to_string()])?;
        }
        w.flush()?;

        if self.config.tv_cost_sd > 0.0 {
            let mut w = csv::Writer::from_path(dir.join("tradecost_tv_truth.csv"))?;
            w.write_record(["origin", "dest", "year", "T"])?;
            let pairs = n * (n - 1);
            for (r, c) in self.log_cost.iter().enumerate() {
                let (i, j) = pair_at(n, r % pairs);
                w.write_record([index.code(i), index.code(j), &years[r / pairs].to_string(), &c.exp().to_string()])?;
            }
            w.flush()?;
        }

        let mut w = csv::Writer::from_path(dir.join("sizes_truth.csv"))?;
        w.write_record(["country", "year", "X", "E"])?;
        for t in 0..years.len() {
            for i in 0..n {
                w.write_record([index.code(i), &years[t].to_string(), &self.output[t][i].to_string(), &self.expenditure[t][i].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel<T> {
    pub dataset: PanelDataset<T>,
    pub truth: GroundTruth,
}

fn normal(rng: &mut ChaCha20Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite parameters").sample(rng)
}

fn schema() -> CovariateSchema {
    let mut text = String::new();
    for n in SIZE_COVARIATES {
        text.push_str(&format!("{n}_o = \"origin:size\"\n"));
    }
    for n in SIZE_COVARIATES {
        text.push_str(&format!("{n}_d = \"dest:size\"\n"));
    }
    for n in COST_DUMMIES {
        text.push_str(&format!("{n} = \"dyadic:cost\"\n"));
    }
    CovariateSchema::from_toml_str(&text).expect("static schema")
}

/// Draws a balanced synthetic panel and its ground truth.
pub fn generate_synthetic<T: Real>(config: &GeneratorConfig) -> Result<SyntheticPanel<T>> {
    config.validate()?;
    let (n, nt) = (config.countries, config.years);
    let pairs = n * (n - 1);
    let index = CountryIndex::synthetic(n)?;
    let years: Vec<i32> = (0..nt).map(|t| config.first_year + t as i32).collect();

    // geography and cost dummies
    let mut geo = substream(config.seed, Stream::Generate, 0);
    let coordinates: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let (u, v): (f64, f64) = (geo.random(), geo.random());
            ((2.0 * u - 1.0).asin().to_degrees(), 360.0 * v - 180.0)
        })
        .collect();
    let dist: DMatrix<f64> = distances_from_coordinates(&coordinates);
    if (0..pairs).map(|p| pair_at(n, p)).any(|(i, j)| !(dist[(i, j)] > 0.0)) {
        return Err(Error::InvalidConfig("two centroids coincide; choose another seed".into()));
    }
    let mut dummies = vec![DMatrix::<f64>::zeros(n, n); 3];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]));
        for &j in order.iter().take(2) {
            dummies[0][(i, j)] = 1.0;
            dummies[0][(j, i)] = 1.0;
        }
    }
    let language: Vec<u32> = (0..n).map(|_| geo.random_range(0..4)).collect();
    let union: Vec<bool> = (0..n).map(|_| geo.random_bool(0.4)).collect();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            dummies[1][(i, j)] = f64::from(language[i] == language[j]);
            dummies[2][(i, j)] = f64::from(union[i] && union[j]);
        }
    }

    // trade costs
    let d_part: Vec<f64> = (0..pairs).map(|p| pair_at(n, p)).map(|(i, j)| config.distance_elasticity * dist[(i, j)].ln()).collect();
    let z_part: Vec<f64> = (0..pairs)
        .map(|p| pair_at(n, p))
        .map(|(i, j)| (0..3).map(|k| config.cost_dummies[k] * dummies[k][(i, j)]).sum())
        .collect();
    let cost_scale = calibrate_scale(&d_part, &z_part, config.distance_share);
    let mut cost_rng = substream(config.seed, Stream::Generate, COST_STREAM);
    let eta: Vec<f64> = (0..pairs * nt).map(|_| normal(&mut cost_rng, 0.0, config.tv_cost_sd)).collect();
    let raw: Vec<f64> = (0..pairs * nt).map(|r| d_part[r % pairs] + cost_scale * z_part[r % pairs] + eta[r]).collect();
    let cost_shift = (-raw.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
    let log_cost: Vec<f64> = raw.iter().map(|c| c + cost_shift).collect();
    let base_log_cost: Vec<f64> = (0..pairs).map(|p| d_part[p] + cost_scale * z_part[p] + cost_shift).collect();

    // country sizes: random walks in (pop, gdp, ppp)
    let mut size_rng = substream(config.seed, Stream::Generate, SIZE_STREAM);
    let mut attempt = 0;
    let (covs, output, expenditure) = loop {
        let draw = draw_sizes(&mut size_rng, config);
        if config.domestic == DomesticTrade::Frictionless || concentration(&draw.1, &draw.2) <= MAX_CONCENTRATION {
            break draw;
        }
        attempt += 1;
        if attempt == MAX_SIZE_DRAWS {
            return Err(Error::InvalidConfig(format!("no admissible size draw in {MAX_SIZE_DRAWS} attempts; one country dominates the world economy")));
        }
    };

    // structural solution
    let worlds = (0..nt)
        .map(|t| {
            let costs = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    config.domestic.diagonal_cost()
                } else {
                    log_cost[t * pairs + crate::panel::pair_position(n, i, j)].exp()
                }
            });
            StructuralWorld::new(config.sigma, costs, expenditure[t].clone(), output[t].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mrt = MrtSolver::default().solve_panel(&worlds, config.mrt_mode).map_err(|e| match e {
        Error::NonConvergence { .. } => Error::InvalidConfig(format!("resistance terms not found for this draw ({e}); sizes may be too concentrated")),
        other => other,
    })?;

    let e = 1.0 - config.sigma;
    let structural: Vec<f64> = (0..pairs * nt)
        .map(|r| {
            let (t, (i, j)) = (r / pairs, pair_at(n, r % pairs));
            let total: f64 = output[t].iter().sum();
            output[t][i].ln() + expenditure[t][j].ln() - total.ln() + e * (log_cost[r] - mrt[t].pi[i].ln() - mrt[t].p[j].ln())
        })
        .collect();
    let noise: Vec<f64> = (0..nt)
        .flat_map(|t| {
            let mut rng = substream(config.seed, Stream::Generate, NOISE_STREAM + t as u64);
            (0..pairs).map(move |_| normal(&mut rng, 0.0, config.noise_sd)).collect::<Vec<_>>()
        })
        .collect();
    let shocks: Vec<f64> = structural.iter().zip(&noise).map(|(s, u)| s + u).collect();

    let flow_weights = FlowWeight::new(
        crate::spatial::inverse_distance_weights(&dist, config.weights.normalization)?,
        config.weights.mode,
    );
    let response = if config.rho == 0.0 { shocks.clone() } else { solve_spatial(&flow_weights, config.rho, &shocks)? };
    let spatial_lag = flow_weights.lag_panel(&response)?;

    let mut observations = Vec::with_capacity(pairs * nt);
    for (r, &y) in response.iter().enumerate() {
        let (t, (i, j)) = (r / pairs, pair_at(n, r % pairs));
        let mut c: Vec<T> = Vec::with_capacity(9);
        c.extend(covs[t][i].iter().map(|&v| T::lit(v)));
        c.extend(covs[t][j].iter().map(|&v| T::lit(v)));
        c.extend((0..3).map(|k| T::lit(dummies[k][(i, j)])));
        observations.push(Observation { origin: i, dest: j, year: years[t], flow: T::lit(y), covariates: c });
    }
    let dataset = PanelDataset::from_observations(
        index,
        years,
        schema(),
        observations,
        dist.map(T::lit),
        DiagonalPolicy::Reject,
    )?;
    let truth = GroundTruth {
        config: config.clone(),
        coordinates,
        cost_scale,
        cost_shift,
        base_log_cost,
        log_cost,
        output,
        expenditure,
        worlds,
        mrt,
        structural,
        noise,
        spatial_lag,
    };
    Ok(SyntheticPanel { dataset, truth })
}

type SizeDraw = (Vec<Vec<[f64; 3]>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn draw_sizes(size_rng: &mut ChaCha20Rng, config: &GeneratorConfig) -> SizeDraw {
    let (n, nt) = (config.countries, config.years);
    let mut state: Vec<[f64; 3]> =
        (0..n).map(|_| [normal(size_rng, 0.0, 0.5), normal(size_rng, 0.0, 0.5), normal(size_rng, 0.0, 0.3)]).collect();
    let mut covs: Vec<Vec<[f64; 3]>> = Vec::with_capacity(nt);
    for t in 0..nt {
        if t > 0 {
            for s in state.iter_mut() {
                s[0] += normal(size_rng, 0.01, config.size_shock_sd);
                s[1] += normal(size_rng, 0.02, config.size_shock_sd);
                s[2] += normal(size_rng, 0.0, config.size_shock_sd);
            }
        }
        covs.push(state.clone());
    }
    let dot = |b: &[f64; 3], x: &[f64; 3]| b[0] * x[0] + b[1] * x[1] + b[2] * x[2];
    let output: Vec<Vec<f64>> = covs.iter().map(|ct| ct.iter().map(|x| dot(&config.origin_size, x).exp()).collect()).collect();
    let expenditure: Vec<Vec<f64>> = covs
        .iter()
        .zip(&output)
        .map(|(ct, xt)| {
            let raw: Vec<f64> = ct.iter().map(|x| dot(&config.dest_size, x).exp()).collect();
            let kappa = xt.iter().sum::<f64>() / raw.iter().sum::<f64>();
            raw.iter().map(|e| e * kappa).collect()
        })
        .collect();
    (covs, output, expenditure)
}

/// Largest `(X_i + E_i) / total` over countries and years. Without domestic
/// trade a country's sales must fit in the rest of the world's spending.
fn concentration(output: &[Vec<f64>], expenditure: &[Vec<f64>]) -> f64 {
    output
        .iter()
        .zip(expenditure)
        .map(|(x, e)| {
            let total: f64 = x.iter().sum();
            x.iter().zip(e).map(|(a, b)| (a + b) / total).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Positive `s` with `Var(d) / Var(d + s z) = share`; one when not calibrating.
fn calibrate_scale(d: &[f64], z: &[f64], share: f64) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (md, mz) = (mean(d), mean(z));
    let a = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / d.len() as f64;
    let b = d.iter().zip(z).map(|(x, y)| (x - md) * (y - mz)).sum::<f64>() / d.len() as f64;
    let c = z.iter().map(|y| (y - mz).powi(2)).sum::<f64>() / z.len() as f64;
    if share <= 0.0 || c <= 0.0 || a <= 0.0 {
        return 1.0;
    }
    // c s^2 + 2 b s + a (1 - 1/share) = 0
    let k = a * (1.0 - 1.0 / share);
    let disc = b * b - c * k;
    (-b + disc.sqrt()) / c
}

/// `y = (I - rho W)^{-1} b`, year by year, by fixed-point iteration.
fn solve_spatial(w: &FlowWeight<f64>, rho: f64, b: &[f64]) -> Result<Vec<f64>> {
    let mut y = b.to_vec();
    for _ in 0..10_000 {
        let wy = w.lag_panel(&y)?;
        let next: Vec<f64> = b.iter().zip(&wy).map(|(bi, wi)| bi + rho * wi).collect();
        let change = next.iter().zip(&y).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        let scale = next.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        y = next;
        if change <= 1e-14 * scale {
            return Ok(y);
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::InvalidConfig(format!("spatial filter with rho = {rho} does not converge for these weights")))
}
