//! Reference implementations used by the test suites: Newton solvers for the
//! resistance terms, dummy-variable least squares, a double-sum Moran's I and
//! a step-by-step bootstrap replication. Everything runs in `f64` on dense
//! matrices and shares no numerical code with the production paths.

use nalgebra::{DMatrix, DVector};

use crate::panel::{pair_at, pair_position, Component, ModelSpec, PairEffects, PanelDataset, Variation};
use crate::spatial::FlowWeight;
use crate::structural::StructuralWorld;

/// `(ln Pi^(1 - sigma), ln P^(1 - sigma))` solving the scaling system with
/// kernel `k`, row targets `rows` and column targets `cols`, normalized by
/// `ln P_anchor = 0`.
pub fn newton_scaling(k: &DMatrix<f64>, rows: &[f64], cols: &[f64], anchor: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let ln_a = DMatrix::from_fn(n, n, |i, j| if k[(i, j)] > 0.0 { (k[(i, j)] / rows[i]).ln() } else { f64::NEG_INFINITY });
    let ln_b = DMatrix::from_fn(n, n, |i, j| if k[(i, j)] > 0.0 { (k[(i, j)] / cols[j]).ln() } else { f64::NEG_INFINITY });
    // unknowns: a (n), then b without the anchor (n - 1)
    let unpack = |x: &DVector<f64>| {
        let a: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let mut b = vec![0.0; n];
        let mut k = n;
        for (j, bj) in b.iter_mut().enumerate() {
            if j != anchor {
                *bj = x[k];
                k += 1;
            }
        }
        (a, b)
    };
    let softmax = |v: Vec<f64>| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        (m + s.ln(), e.into_iter().map(|x| x / s).collect::<Vec<_>>())
    };
    let system = |x: &DVector<f64>| {
        let (a, b) = unpack(x);
        let mut f = DVector::zeros(2 * n - 1);
        let mut jac = DMatrix::zeros(2 * n - 1, 2 * n - 1);
        let col_of = |j: usize| if j < anchor { n + j } else { n + j - 1 };
        for i in 0..n {
            let (lse, w) = softmax((0..n).map(|j| ln_a[(i, j)] - b[j]).collect());
            f[i] = a[i] - lse;
            jac[(i, i)] = 1.0;
            for j in (0..n).filter(|&j| j != anchor) {
                jac[(i, col_of(j))] = w[j];
            }
        }
        for j in (0..n).filter(|&j| j != anchor) {
            let (lse, w) = softmax((0..n).map(|i| ln_b[(i, j)] - a[i]).collect());
            let r = col_of(j);
            f[r] = b[j] - lse;
            jac[(r, r)] = 1.0;
            for i in 0..n {
                jac[(r, i)] = w[i];
            }
        }
        (f, jac)
    };
    // start with the row equations solved at b = 0
    let mut x = DVector::zeros(2 * n - 1);
    for i in 0..n {
        x[i] = softmax((0..n).map(|j| ln_a[(i, j)]).collect()).0;
    }
    for _ in 0..200 {
        let (f, jac) = system(&x);
        let norm = f.norm();
        if norm < 1e-15 {
            break;
        }
        let step = jac.lu().solve(&(-&f)).expect("non-singular Jacobian");
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            if system(&trial).0.norm() < norm || t < 1e-8 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
    }
    unpack(&x)
}

fn kernel(world: &StructuralWorld<f64>) -> DMatrix<f64> {
    let n = world.n();
    let total: f64 = world.output().iter().sum();
    DMatrix::from_fn(n, n, |i, j| {
        let t = world.costs()[(i, j)];
        if t.is_finite() {
            t.powf(1.0 - world.sigma()) * world.expenditure()[j] * world.output()[i] / total
        } else {
            0.0
        }
    })
}

fn levels(sigma: f64, (a, b): (Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
    let e = 1.0 - sigma;
    (a.iter().map(|v| (v / e).exp()).collect(), b.iter().map(|v| (v / e).exp()).collect())
}

/// `(Pi, P)` of one world with `P_anchor = 1`.
pub fn newton_mrt(world: &StructuralWorld<f64>, anchor: usize) -> (Vec<f64>, Vec<f64>) {
    levels(world.sigma(), newton_scaling(&kernel(world), world.output(), world.expenditure(), anchor))
}

/// `(Pi, P)` shared by all worlds, markets clearing in aggregate.
pub fn newton_mrt_pooled(worlds: &[StructuralWorld<f64>], anchor: usize) -> (Vec<f64>, Vec<f64>) {
    let n = worlds[0].n();
    let mut k = DMatrix::zeros(n, n);
    let (mut rows, mut cols) = (vec![0.0; n], vec![0.0; n]);
    for w in worlds {
        k += kernel(w);
        for i in 0..n {
            rows[i] += w.output()[i];
            cols[i] += w.expenditure()[i];
        }
    }
    levels(worlds[0].sigma(), newton_scaling(&k, &rows, &cols, anchor))
}

/// Equation residuals `max |lhs / rhs - 1|` of `(Pi, P)` in one world.
pub fn mrt_equation_residual(world: &StructuralWorld<f64>, pi: &[f64], p: &[f64]) -> f64 {
    let n = world.n();
    let s = world.sigma();
    let total: f64 = world.output().iter().sum();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let rhs: f64 = (0..n)
            .filter(|&j| world.costs()[(i, j)].is_finite())
            .map(|j| (world.costs()[(i, j)] / p[j]).powf(1.0 - s) * world.expenditure()[j] / total)
            .sum();
        worst = worst.max((pi[i].powf(1.0 - s) / rhs - 1.0).abs());
    }
    for j in 0..n {
        let rhs: f64 = (0..n)
            .filter(|&i| world.costs()[(i, j)].is_finite())
            .map(|i| (world.costs()[(i, j)] / pi[i]).powf(1.0 - s) * world.output()[i] / total)
            .sum();
        worst = worst.max((p[j].powf(1.0 - s) / rhs - 1.0).abs());
    }
    worst
}

/// Least squares with every fixed effect as an explicit dummy column.
#[derive(Debug, Clone)]
pub struct DummyOls {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Pair effects by pair position (directional pair models), with the
    /// time effects centered at zero.
    pub pair_effects: Option<Vec<f64>>,
    pub time_effects: Option<Vec<f64>>,
}

pub fn dummy_ols(ds: &PanelDataset<f64>, spec: &ModelSpec, y: &[f64]) -> DummyOls {
    let shape = ds.shape();
    let (n, pairs, rows) = (shape.n, shape.pairs(), shape.rows());
    let lag = spec.weights.as_ref().map(|w| FlowWeight::from_spec(ds, w).expect("weights"));
    let pair_fe = spec.pair_effects != PairEffects::None;
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for name in &spec.regressors {
        let (dyadic, col) = if name == "dist" {
            (true, (0..rows).map(|r| {
                let (i, j) = pair_at(n, r % pairs);
                ds.distance_km()[(i, j)].ln()
            }).collect())
        } else if let Some(base) = name.strip_prefix("W:") {
            let c = ds.schema().position(base).expect("covariate");
            let raw: Vec<f64> = (0..rows).map(|r| cell(ds, c, r)).collect();
            (ds.schema().entries()[c].1.variation == Variation::Dyadic, lag.as_ref().expect("weights").lag_panel(&raw).expect("lag"))
        } else {
            let c = ds.schema().position(name).expect("covariate");
            (ds.schema().entries()[c].1.variation == Variation::Dyadic, (0..rows).map(|r| cell(ds, c, r)).collect())
        };
        if pair_fe && dyadic {
            continue;
        }
        names.push(name.clone());
        cols.push(col);
    }
    let k = cols.len();
    let group = |r: usize| (r / pairs, pair_at(n, r % pairs));
    let mut dummy_blocks: Vec<(&str, usize, Box<dyn Fn(usize) -> usize>)> = Vec::new();
    match spec.pair_effects {
        PairEffects::Directional => dummy_blocks.push(("pair", pairs, Box::new(move |r| r % pairs))),
        PairEffects::Symmetric => dummy_blocks.push((
            "sympair",
            pairs / 2,
            Box::new(move |r| {
                let (_, (i, j)) = group(r);
                let (a, b) = (i.min(j), i.max(j));
                a * (2 * n - a - 1) / 2 + (b - a - 1)
            }),
        )),
        PairEffects::None => {}
    }
    if spec.country_effects {
        dummy_blocks.push(("origin", n, Box::new(move |r| group(r).1 .0)));
        dummy_blocks.push(("dest", n, Box::new(move |r| group(r).1 .1)));
    }
    if spec.time_effects {
        dummy_blocks.push(("time", shape.years, Box::new(move |r| r / pairs)));
    }
    // first block complete, later blocks drop their first level; constant if none
    let mut offsets = Vec::new();
    let mut width = k;
    for (b, (_, levels, _)) in dummy_blocks.iter().enumerate() {
        offsets.push(width);
        width += if b == 0 { *levels } else { levels - 1 };
    }
    if dummy_blocks.is_empty() {
        width += 1;
    }
    let x = DMatrix::from_fn(rows, width, |r, c| {
        if c < k {
            return cols[c][r];
        }
        if dummy_blocks.is_empty() {
            return 1.0;
        }
        for (b, (_, _, f)) in dummy_blocks.iter().enumerate() {
            let start = offsets[b];
            let end = offsets.get(b + 1).copied().unwrap_or(width);
            if (start..end).contains(&c) {
                let level = c - start + usize::from(b > 0);
                return f64::from(u8::from(f(r) == level));
            }
        }
        unreachable!()
    });
    let yv = DVector::from_column_slice(y);
    let coef = x.clone().svd(true, true).solve(&yv, 1e-12).expect("svd solve");
    let residuals: Vec<f64> = (&yv - &x * &coef).iter().copied().collect();
    let beta: Vec<f64> = (0..k).map(|c| coef[c]).collect();

    let (mut pair_effects, mut time_effects) = (None, None);
    if spec.pair_effects == PairEffects::Directional {
        let mut theta: Vec<f64> = (0..pairs).map(|p| coef[offsets[0] + p]).collect();
        if let Some(tb) = dummy_blocks.iter().position(|(name, _, _)| *name == "time") {
            let mut tau = vec![0.0];
            tau.extend((1..shape.years).map(|t| coef[offsets[tb] + t - 1]));
            let m = tau.iter().sum::<f64>() / tau.len() as f64;
            tau.iter_mut().for_each(|v| *v -= m);
            theta.iter_mut().for_each(|v| *v += m);
            time_effects = Some(tau);
        }
        pair_effects = Some(theta);
    }
    DummyOls { names, beta, residuals, pair_effects, time_effects }
}

fn cell(ds: &PanelDataset<f64>, c: usize, r: usize) -> f64 {
    let pairs = ds.n_pairs();
    let (i, j) = pair_at(ds.n(), r % pairs);
    ds.covariate(c, i, j, r / pairs)
}

/// Moran's I by the explicit double sum over a dense weight matrix.
pub fn moran_double_sum(w: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut s0 = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[(i, j)] * (x[i] - mean) * (x[j] - mean);
            s0 += w[(i, j)];
        }
    }
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    n as f64 / s0 * num / den
}

/// Raw structural residuals `r_ij` from a response, step by step: dummy
/// least squares, pair effects, cost loadings by SVD least squares,
/// pooled Newton resistance terms, level offset.
pub fn pipeline_residuals(ds: &PanelDataset<f64>, spec: &ModelSpec, y: &[f64], sigma: f64) -> Vec<f64> {
    let n = ds.n();
    let years = ds.n_years();
    let pairs = ds.n_pairs();
    let ols = dummy_ols(ds, spec, y);
    let theta = ols.pair_effects.expect("directional pair effects");
    let beta = |name: &str| ols.beta[ols.names.iter().position(|m| m == name).expect("size coefficient")];

    let mut x_hat = vec![vec![0.0; n]; years];
    let mut e_hat = vec![vec![0.0; n]; years];
    let mut cost_cols = Vec::new();
    for (c, (name, role)) in ds.schema().entries().iter().enumerate() {
        match (role.component, role.variation) {
            (Component::Size, Variation::Origin) => {
                for (t, row) in x_hat.iter_mut().enumerate() {
                    for (i, v) in row.iter_mut().enumerate() {
                        *v += beta(name) * ds.covariate(c, i, (i + 1) % n, t);
                    }
                }
            }
            (Component::Size, Variation::Dest) => {
                for (t, row) in e_hat.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += beta(name) * ds.covariate(c, (j + 1) % n, j, t);
                    }
                }
            }
            (Component::Cost, _) => cost_cols.push(c),
            _ => {}
        }
    }
    let ln_d = |i: usize, j: usize| ds.distance_km()[(i, j)].ln();
    let e = 1.0 - sigma;
    // theta - e ln d regressed on [cost covariates, origin dummies, dest dummies 1..]
    let width = cost_cols.len() + 2 * n - 1;
    let z = DMatrix::from_fn(pairs, width, |p, c| {
        let (i, j) = pair_at(n, p);
        if c < cost_cols.len() {
            ds.covariate(cost_cols[c], i, j, 0)
        } else if c < cost_cols.len() + n {
            f64::from(u8::from(i == c - cost_cols.len()))
        } else {
            f64::from(u8::from(j == c - cost_cols.len() - n + 1))
        }
    });
    let target = DVector::from_iterator(pairs, (0..pairs).map(|p| {
        let (i, j) = pair_at(n, p);
        theta[p] - e * ln_d(i, j)
    }));
    // minimum-norm least squares: an all-zero cost column gets loading 0
    let psi = z.svd(true, true).solve(&target, 1e-10).expect("least squares");
    let ln_t = |i: usize, j: usize| {
        ln_d(i, j) + cost_cols.iter().enumerate().map(|(k, &c)| psi[k] / e * ds.covariate(c, i, j, 0)).sum::<f64>()
    };

    let mut k = DMatrix::zeros(n, n);
    let (mut rows, mut cols) = (vec![0.0; n], vec![0.0; n]);
    for t in 0..years {
        let xs: Vec<f64> = x_hat[t].iter().map(|v| v.exp()).collect();
        let es: Vec<f64> = e_hat[t].iter().map(|v| v.exp()).collect();
        let (sx, se): (f64, f64) = (xs.iter().sum(), es.iter().sum());
        for i in 0..n {
            rows[i] += xs[i];
            cols[i] += es[i] * sx / se;
            for j in (0..n).filter(|&j| j != i) {
                k[(i, j)] += (e * ln_t(i, j)).exp() * es[j] / se * xs[i];
            }
        }
    }
    let (pi, p) = levels(sigma, newton_scaling(&k, &rows, &cols, 0));
    let offset = -(0..years).map(|t| e_hat[t].iter().map(|v| v.exp()).sum::<f64>().ln()).sum::<f64>() / years as f64;
    (0..pairs)
        .map(|q| {
            let (i, j) = pair_at(n, q);
            let s = (sigma - 1.0) * (pi[i].ln() + p[j].ln()) + offset + e * ln_t(i, j);
            theta[pair_position(n, i, j)] - s
        })
        .collect()
}
