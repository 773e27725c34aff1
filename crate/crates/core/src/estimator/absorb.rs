//! Fixed-effect absorption by alternating projections.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::{Factor, FactorKind};
use crate::scalar::Real;

const MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone)]
pub(crate) struct Absorber {
    factors: Vec<Factor>,
    counts: Vec<Vec<usize>>,
}

/// Estimated effects per factor plus the part of the input orthogonal to all dummies.
#[derive(Debug, Clone)]
pub(crate) struct Effects<T> {
    pub values: Vec<Vec<T>>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub residual: Vec<T>,
}

impl Absorber {
    pub fn new(factors: &[Factor]) -> Self {
        let counts = factors
            .iter()
            .map(|f| {
                let mut c = vec![0usize; f.n_groups];
                f.groups.iter().for_each(|&g| c[g] += 1);
                c
            })
            .collect();
        Self { factors: factors.to_vec(), counts }
    }

    /// One pass over every factor. Returns the largest group mean removed.
    fn sweep<T: Real>(&self, v: &mut [T], mut effects: Option<&mut Vec<Vec<T>>>) -> T {
        let mut largest = T::zero();
        for (f, factor) in self.factors.iter().enumerate() {
            let mut sums = vec![T::zero(); factor.n_groups];
            for (&g, &x) in factor.groups.iter().zip(v.iter()) {
                sums[g] += x;
            }
            for (s, &c) in sums.iter_mut().zip(&self.counts[f]) {
                if c > 0 {
                    *s /= T::from_usize_lossy(c);
                }
                largest = largest.max(s.abs());
            }
            for (&g, x) in factor.groups.iter().zip(v.iter_mut()) {
                *x -= sums[g];
            }
            if let Some(eff) = effects.as_deref_mut() {
                eff[f].iter_mut().zip(&sums).for_each(|(e, &m)| *e += m);
            }
        }
        largest
    }

    fn run<T: Real>(&self, v: &mut [T], mut effects: Option<&mut Vec<Vec<T>>>) -> Result<()> {
        let scale = v.iter().fold(T::zero(), |a, x| a.max(x.abs())).max(T::tiny());
        let tol = T::eps() * T::lit(1e3) * scale;
        let floor = T::eps().sqrt() * scale;
        let mut previous = T::max_value().unwrap_or_else(T::one);
        for sweep in 0..MAX_SWEEPS {
            let largest = self.sweep(v, effects.as_deref_mut());
            if self.factors.len() == 1 || largest <= tol {
                return Ok(());
            }
            // rounding noise: progress has stalled at a negligible level
            if sweep > 2 && largest <= floor && largest >= previous * T::lit(0.9) {
                return Ok(());
            }
            previous = largest;
        }
        Err(Error::NonConvergence {
            iterations: MAX_SWEEPS,
            residual: previous.to_f64_lossy(),
            context: Some("fixed-effect absorption".into()),
        })
    }

    /// Replaces `v` by its residual from a regression on all dummy blocks.
    pub fn demean<T: Real>(&self, v: &mut [T]) -> Result<()> {
        self.run(v, None)
    }

    pub fn demean_matrix<T: Real>(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        let rows = m.nrows();
        let cols = (0..m.ncols())
            .into_par_iter()
            .map(|c| {
                let mut col: Vec<T> = m.column(c).iter().copied().collect();
                self.demean(&mut col).map(|_| col)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(rows, m.ncols(), |r, c| cols[c][r]))
    }

    /// Decomposes `w` into dummy effects and a residual. Time effects are
    /// normalized to mean zero (level moved to the first non-time factor);
    /// with origin and destination effects, destination effects also have mean zero.
    pub fn effects<T: Real>(&self, w: &[T]) -> Result<Effects<T>> {
        let mut residual = w.to_vec();
        let mut values: Vec<Vec<T>> = self.factors.iter().map(|f| vec![T::zero(); f.n_groups]).collect();
        self.run(&mut residual, Some(&mut values))?;

        let position = |k: FactorKind| self.factors.iter().position(|f| f.kind == k);
        let level = self.factors.iter().position(|f| f.kind != FactorKind::Time);
        if let (Some(t), Some(l)) = (position(FactorKind::Time), level) {
            shift_mean(&mut values, t, l);
        }
        if let (Some(d), Some(o)) = (position(FactorKind::Dest), position(FactorKind::Origin)) {
            shift_mean(&mut values, d, o);
        }
        Ok(Effects { values, residual })
    }
}

fn shift_mean<T: Real>(values: &mut [Vec<T>], from: usize, to: usize) {
    let m = crate::scalar::mean(&values[from]);
    values[from].iter_mut().for_each(|v| *v -= m);
    values[to].iter_mut().for_each(|v| *v += m);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_design, CountryIndex, ModelSpec, PairEffects};
    use approx::assert_relative_eq;

    fn factors(n: usize, years: usize, pair: PairEffects, country: bool) -> Vec<Factor> {
        let ds = crate::panel::tests_support::tiny_dataset(CountryIndex::synthetic(n).unwrap(), years);
        let mut spec = ModelSpec::without_distance(&ds);
        spec.regressors.clear();
        spec.pair_effects = pair;
        spec.country_effects = country;
        build_design(&ds, &spec, None).unwrap().factors
    }

    #[test]
    fn demeaned_vector_has_zero_group_means() {
        let fs = factors(5, 4, PairEffects::None, true);
        let ab = Absorber::new(&fs);
        let mut v: Vec<f64> = (0..80).map(|k| ((k * 7919) % 101) as f64 / 13.0).collect();
        ab.demean(&mut v).unwrap();
        for f in &fs {
            let mut sums = vec![0.0; f.n_groups];
            f.groups.iter().zip(&v).for_each(|(&g, &x)| sums[g] += x);
            sums.iter().for_each(|&s| assert!(s.abs() < 1e-10));
        }
    }

    #[test]
    fn pair_time_effects_have_closed_form() {
        let fs = factors(4, 3, PairEffects::Directional, false);
        let ab = Absorber::new(&fs);
        let w: Vec<f64> = (0..36).map(|k| (k as f64 * 0.7).cos() * 3.0 + k as f64 * 0.1).collect();
        let eff = ab.effects(&w).unwrap();
        let theta_mean = eff.values[0].iter().sum::<f64>() / 12.0;
        for p in 0..12 {
            let m = (0..3).map(|t| w[t * 12 + p]).sum::<f64>() / 3.0;
            assert_relative_eq!(eff.values[0][p], m, epsilon = 1e-12);
        }
        for t in 0..3 {
            let m = w[t * 12..(t + 1) * 12].iter().sum::<f64>() / 12.0;
            assert_relative_eq!(eff.values[1][t], m - theta_mean, epsilon = 1e-12);
        }
        for (r, &x) in w.iter().enumerate() {
            let fitted = eff.values[0][r % 12] + eff.values[1][r / 12] + eff.residual[r];
            assert_relative_eq!(fitted, x, epsilon = 1e-12);
        }
    }
}
