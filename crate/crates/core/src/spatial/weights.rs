use std::path::Path;

use nalgebra::DMatrix;

use super::{Normalization, SpatialOperator, WeightMoments};
use crate::error::{Error, Result};
use crate::scalar::Real;

const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    InverseDistance,
    Custom,
}

/// Country-level `n x n` weight matrix: non-negative, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T: Real> {
    values: DMatrix<T>,
    normalization: Normalization,
    provenance: Provenance,
}

/// Great-circle distance in kilometres between two points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Symmetric distance matrix from `(lat, lon)` centroids in degrees.
pub fn distances_from_coordinates<T: Real>(coords: &[(f64, f64)]) -> DMatrix<T> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            T::zero()
        } else {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            T::lit(haversine_km(coords[a].0, coords[a].1, coords[b].0, coords[b].1))
        }
    })
}

/// `w_ij = 1 / d_ij` off the diagonal, then normalized.
pub fn inverse_distance_weights<T: Real>(distances_km: &DMatrix<T>, normalization: Normalization) -> Result<WeightMatrix<T>> {
    let n = distances_km.nrows();
    if distances_km.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: distances_km.ncols() });
    }
    for i in 0..n {
        if distances_km[(i, i)] != T::zero() {
            return Err(Error::AsymmetricInput);
        }
        for j in 0..i {
            if distances_km[(i, j)] != distances_km[(j, i)] {
                return Err(Error::AsymmetricInput);
            }
            if distances_km[(i, j)] <= T::zero() {
                return Err(Error::ZeroDistance(j, i));
            }
        }
    }
    let raw = DMatrix::from_fn(n, n, |i, j| if i == j { T::zero() } else { T::one() / distances_km[(i, j)] });
    WeightMatrix::build(raw, normalization, Provenance::InverseDistance)
}

impl<T: Real> WeightMatrix<T> {
    /// User-supplied weights; validated and then normalized.
    pub fn custom(values: DMatrix<T>, normalization: Normalization) -> Result<Self> {
        Self::build(values, normalization, Provenance::Custom)
    }

    fn build(mut values: DMatrix<T>, normalization: Normalization, provenance: Provenance) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: values.ncols() });
        }
        for i in 0..n {
            for j in 0..n {
                let w = values[(i, j)];
                if !w.is_finite() || w < T::zero() || (i == j && w != T::zero()) {
                    return Err(Error::InvalidValue {
                        column: "weights".into(),
                        reason: format!("entry ({i}, {j}) must be finite, non-negative and zero on the diagonal"),
                    });
                }
            }
        }
        match normalization {
            Normalization::None => {}
            Normalization::RowStochastic => {
                for i in 0..n {
                    let s: T = values.row(i).iter().copied().sum();
                    if s <= T::zero() {
                        return Err(Error::InvalidValue { column: "weights".into(), reason: format!("row {i} has no neighbours") });
                    }
                    values.row_mut(i).iter_mut().for_each(|w| *w /= s);
                }
            }
            Normalization::Spectral => {
                let radius = spectral_radius(&values);
                if radius <= T::zero() {
                    return Err(Error::InvalidValue { column: "weights".into(), reason: "spectral radius is zero".into() });
                }
                values /= radius;
            }
        }
        Ok(Self { values, normalization, provenance })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Long-format CSV `row,col,weight` over all `n^2` entries.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "col", "weight"])?;
        for i in 0..self.n() {
            for j in 0..self.n() {
                w.write_record([i.to_string(), j.to_string(), self.values[(i, j)].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads weights written by [`WeightMatrix::to_csv`] and applies `normalization`.
    pub fn from_csv(path: &Path, normalization: Normalization) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse(format!("short weight record {rec:?}")));
            let i: usize = field(0)?.trim().parse().map_err(|_| Error::Parse(format!("bad row index in {rec:?}")))?;
            let j: usize = field(1)?.trim().parse().map_err(|_| Error::Parse(format!("bad column index in {rec:?}")))?;
            let w: T = field(2)?.trim().parse().map_err(|_| Error::Parse(format!("bad weight in {rec:?}")))?;
            entries.push((i, j, w));
        }
        let n = entries.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
        let mut values = DMatrix::zeros(n, n);
        for (i, j, w) in entries {
            values[(i, j)] = w;
        }
        Self::custom(values, normalization)
    }
}

fn spectral_radius<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    if m == &m.transpose() {
        return m.clone().symmetric_eigen().eigenvalues.iter().fold(T::zero(), |acc, e| acc.max(e.abs()));
    }
    m.complex_eigenvalues().iter().fold(T::zero(), |acc, c| acc.max((c.re * c.re + c.im * c.im).sqrt()))
}

impl<T: Real> SpatialOperator<T> for WeightMatrix<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), found: x.len() });
        }
        Ok((0..self.n()).map(|i| (0..self.n()).map(|j| self.values[(i, j)] * x[j]).sum()).collect())
    }

    fn for_each_entry(&self, f: &mut dyn FnMut(usize, usize, T)) {
        for i in 0..self.n() {
            for j in 0..self.n() {
                let w = self.values[(i, j)];
                if w != T::zero() {
                    f(i, j, w);
                }
            }
        }
    }

    fn moments(&self) -> WeightMoments<T> {
        let n = self.n();
        let v = &self.values;
        let (mut s0, mut sum_sq, mut sum_cross, mut s2) = (T::zero(), T::zero(), T::zero(), T::zero());
        for i in 0..n {
            let (mut r, mut c) = (T::zero(), T::zero());
            for j in 0..n {
                let w = v[(i, j)];
                s0 += w;
                sum_sq += w * w;
                sum_cross += w * v[(j, i)];
                r += w;
                c += v[(j, i)];
            }
            s2 += (r + c) * (r + c);
        }
        WeightMoments { s0, sum_sq, sum_cross, s2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * 100.0)
    }

    #[test]
    fn row_stochastic_rows_sum_to_one() {
        let w = inverse_distance_weights(&line(5), Normalization::RowStochastic).unwrap();
        for i in 0..5 {
            assert_relative_eq!(w.values().row(i).sum(), 1.0, epsilon = 1e-14);
            assert_eq!(w.get(i, i), 0.0);
        }
    }

    #[test]
    fn spectral_radius_is_one_after_normalization() {
        let w = inverse_distance_weights(&line(4), Normalization::Spectral).unwrap();
        assert_relative_eq!(spectral_radius(w.values()), 1.0, epsilon = 1e-12);
        let rs = inverse_distance_weights(&line(4), Normalization::RowStochastic).unwrap();
        assert_relative_eq!(spectral_radius(rs.values()), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rejects_zero_and_asymmetric_distances() {
        let mut d = line(3);
        d[(0, 2)] = 0.0;
        d[(2, 0)] = 0.0;
        assert!(matches!(inverse_distance_weights(&d, Normalization::None), Err(Error::ZeroDistance(0, 2))));
        let mut d = line(3);
        d[(0, 1)] = 7.0;
        assert!(matches!(inverse_distance_weights(&d, Normalization::None), Err(Error::AsymmetricInput)));
    }

    #[test]
    fn haversine_quarter_meridian() {
        assert_relative_eq!(haversine_km(0.0, 0.0, 90.0, 0.0), std::f64::consts::FRAC_PI_2 * EARTH_RADIUS_KM, epsilon = 1e-9);
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let w = inverse_distance_weights(&line(4), Normalization::RowStochastic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        w.to_csv(&path).unwrap();
        let back = WeightMatrix::<f64>::from_csv(&path, Normalization::None).unwrap();
        assert_eq!(back.values(), w.values());
    }
}
