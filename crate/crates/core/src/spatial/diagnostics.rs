use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{FlowWeight, SpatialOperator};
use crate::error::{Error, Result};
use crate::estimator::{FitOptions, FixedEffectsRegression, GravityFit};
use crate::panel::{ModelSpec, PanelDataset};
use crate::rng::{substream, Stream};
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct MoranResult<T> {
    pub statistic: T,
    /// `-1 / (N - 1)`
    pub expected: T,
    /// Variance under the normality assumption.
    pub variance: T,
    pub z: T,
    /// Two-sided normal p-value.
    pub p_value: f64,
    pub permutations: usize,
    /// Pseudo p-value `(1 + #{|I_k - E| >= |I - E|}) / (P + 1)`.
    pub permutation_p: Option<f64>,
}

fn centred<T: Real>(x: &[T]) -> Result<(Vec<T>, T)> {
    let m = crate::scalar::mean(x);
    let z: Vec<T> = x.iter().map(|&v| v - m).collect();
    let zz: T = z.iter().map(|&v| v * v).sum();
    let scale = x.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let noise = T::eps() * T::lit(16.0) * scale;
    if !(zz > noise * noise * T::from_usize_lossy(x.len())) {
        return Err(Error::ZeroVariance);
    }
    Ok((z, zz))
}

fn statistic<T: Real, W: SpatialOperator<T> + ?Sized>(w: &W, z: &[T], zz: T, s0: T) -> Result<T> {
    let wz = w.apply(z)?;
    let num: T = z.iter().zip(&wz).map(|(&a, &b)| a * b).sum();
    Ok(T::from_usize_lossy(z.len()) / s0 * num / zz)
}

/// Moran's I of `x` under `w`, with moments under the normality assumption.
pub fn morans_i<T: Real, W: SpatialOperator<T> + ?Sized>(w: &W, x: &[T]) -> Result<MoranResult<T>> {
    let n = w.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    if n < 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: n });
    }
    let (z, zz) = centred(x)?;
    let m = w.moments();
    if !(m.s0 > T::zero()) {
        return Err(Error::InvalidValue { column: "weights".into(), reason: "weights sum to zero".into() });
    }
    let i = statistic(w, &z, zz, m.s0)?;
    let nn = T::from_usize_lossy(n);
    let expected = -T::one() / (nn - T::one());
    let variance = (nn * nn * m.s1() - nn * m.s2 + T::lit(3.0) * m.s0 * m.s0) / ((nn * nn - T::one()) * m.s0 * m.s0)
        - expected * expected;
    let zscore = (i - expected) / variance.sqrt();
    Ok(MoranResult {
        statistic: i,
        expected,
        variance,
        z: zscore,
        p_value: stats::normal_two_sided_p(zscore.to_f64_lossy()),
        permutations: 0,
        permutation_p: None,
    })
}

/// Moran's I with a seeded permutation reference distribution.
pub fn morans_i_permutation<T: Real, W: SpatialOperator<T> + ?Sized>(
    w: &W,
    x: &[T],
    permutations: usize,
    seed: u64,
) -> Result<MoranResult<T>> {
    let mut base = morans_i(w, x)?;
    let (z, zz) = centred(x)?;
    let s0 = w.moments().s0;
    let observed = (base.statistic - base.expected).abs();
    let draws = (0..permutations)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, Stream::Permutation, k as u64);
            let mut zp = z.clone();
            zp.shuffle(&mut rng);
            statistic(w, &zp, zz, s0)
        })
        .collect::<Result<Vec<T>>>()?;
    let extreme = draws.iter().filter(|&&d| (d - base.expected).abs() >= observed).count();
    base.permutations = permutations;
    base.permutation_p = Some((1 + extreme) as f64 / (permutations + 1) as f64);
    Ok(base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmTest<T> {
    pub statistic: T,
    /// Upper tail of a chi-squared(1).
    pub p_value: f64,
}

/// Lagrange-multiplier test for an omitted spatial lag of the response in a
/// fixed-effects fit.
pub fn lm_spatial_lag_test<T: Real>(
    ds: &PanelDataset<T>,
    spec: &ModelSpec,
    fit: &GravityFit<T>,
    weights: &FlowWeight<T>,
) -> Result<LmTest<T>> {
    if fit.rho.is_some() || spec.spatial {
        return Err(Error::SpecMismatch("the lag test applies to a model without a spatial lag".into()));
    }
    if fit.shape != ds.shape() {
        return Err(Error::IndexMismatch("fit and dataset shapes differ".into()));
    }
    let reg = FixedEffectsRegression::new(ds, spec, FitOptions::default())?;
    let e = &fit.residuals;
    let ee: T = e.iter().map(|&v| v * v).sum();
    if !(ee > T::zero()) {
        return Err(Error::ZeroVariance);
    }
    let s2 = ee / T::from_usize_lossy(reg.dof());
    let y = ds.response();
    let wy = weights.lag_panel(&y)?;
    let ewy: T = e.iter().zip(&wy).map(|(&a, &b)| a * b).sum();
    let wf = weights.lag_panel(&fit.fitted)?;
    let mwf = reg.residual_maker(&wf)?;
    let quad: T = wf.iter().zip(&mwf).map(|(&a, &b)| a * b).sum();
    let m = weights.panel(ds.n_years()).moments();
    let d = quad / s2 + m.sum_sq + m.sum_cross;
    let stat = (ewy / s2) * (ewy / s2) / d;
    Ok(LmTest { statistic: stat, p_value: stats::chi2_sf(stat.to_f64_lossy(), 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{inverse_distance_weights, Normalization, WeightMatrix};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn ring(n: usize) -> WeightMatrix<f64> {
        let d = DMatrix::from_fn(n, n, |i, j| {
            let k = (i as isize - j as isize).unsigned_abs();
            (k.min(n - k) as f64) * 50.0
        });
        inverse_distance_weights(&d, Normalization::RowStochastic).unwrap()
    }

    #[test]
    fn alternating_pattern_is_negatively_autocorrelated() {
        let w = ring(6);
        let x: Vec<f64> = (0..6).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = morans_i(&w, &x).unwrap();
        assert!(r.statistic < r.expected);
    }

    #[test]
    fn constant_input_is_rejected() {
        assert!(matches!(morans_i(&ring(5), &[2.0; 5]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn statistic_is_invariant_to_affine_maps() {
        let w = ring(7);
        let x: Vec<f64> = (0..7).map(|k| (k as f64 * 1.7).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 11.0).collect();
        assert_relative_eq!(morans_i(&w, &x).unwrap().statistic, morans_i(&w, &y).unwrap().statistic, epsilon = 1e-12);
    }

    #[test]
    fn permutation_p_is_reproducible() {
        let w = ring(8);
        let x: Vec<f64> = (0..8).map(|k| (k as f64).powi(2)).collect();
        let a = morans_i_permutation(&w, &x, 199, 5).unwrap();
        let b = morans_i_permutation(&w, &x, 199, 5).unwrap();
        assert_eq!(a.permutation_p, b.permutation_p);
        assert!(a.permutation_p.unwrap() > 0.0 && a.permutation_p.unwrap() <= 1.0);
    }
}
