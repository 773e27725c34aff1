#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use spgravity::panel::{CountryIndex, CovariateSchema, DiagonalPolicy, Observation, PanelDataset, Role};
use spgravity::rng::{substream, Stream};
use spgravity::structural::StructuralWorld;

/// World with costs in `[4, 12]`, no internal trade, and random sizes.
pub fn random_world(seed: u64, n: usize, sigma: f64) -> StructuralWorld<f64> {
    let mut rng = substream(seed, Stream::Generate, 900);
    let costs = DMatrix::from_fn(n, n, |i, j| if i == j { f64::INFINITY } else { 4.0 + 8.0 * rng.random::<f64>() });
    let output: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let raw: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total: f64 = output.iter().sum();
    let scale = total / raw.iter().sum::<f64>();
    let expenditure = raw.iter().map(|e| e * scale).collect();
    StructuralWorld::new(sigma, costs, expenditure, output).unwrap()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Small dataset with one covariate of every role, filled from a seeded stream.
pub fn toy_panel(seed: u64, n: usize, years: usize) -> PanelDataset<f64> {
    let schema = CovariateSchema::new(vec![
        ("gdp_o".into(), "origin:size".parse::<Role>().unwrap()),
        ("gdp_d".into(), "dest:size".parse::<Role>().unwrap()),
        ("contig".into(), "dyadic:cost".parse::<Role>().unwrap()),
        ("tariff".into(), "dyadic_time".parse::<Role>().unwrap()),
    ])
    .unwrap();
    let mut rng = substream(seed, Stream::Generate, 901);
    let gdp: Vec<Vec<f64>> = (0..years).map(|_| (0..n).map(|_| rng.random::<f64>() * 3.0).collect()).collect();
    let contig = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from((i + j) % 3 == 0)));
    let dist = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 500.0 + 100.0 * (i + j) as f64 + 37.0 * (i * j) as f64 });
    let mut obs = Vec::new();
    for t in 0..years {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let tariff = rng.random::<f64>();
                let flow = 1.0 + gdp[t][i] - 0.5 * gdp[t][j] + 0.3 * contig[(i, j)] - 0.7 * tariff + 0.1 * rng.random::<f64>();
                obs.push(Observation {
                    origin: i,
                    dest: j,
                    year: 2000 + t as i32,
                    flow,
                    covariates: vec![gdp[t][i], gdp[t][j], contig[(i, j)], tariff],
                });
            }
        }
    }
    let years: Vec<i32> = (0..years).map(|t| 2000 + t as i32).collect();
    PanelDataset::from_observations(CountryIndex::synthetic(n).unwrap(), years, schema, obs, dist, DiagonalPolicy::Reject).unwrap()
}
