//! Least squares and two-stage least squares on dense designs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Thin QR factorisation of a full-column-rank design, reusable across responses.
#[derive(Debug, Clone)]
pub(crate) struct QrLs<T: Real> {
    q: DMatrix<T>,
    r_inv: DMatrix<T>,
}

impl<T: Real> QrLs<T> {
    /// `reference_norms[k]` is the norm of column `k` before any transformation;
    /// a column whose new component is negligible relative to it is flagged.
    pub fn new(x: &DMatrix<T>, names: &[String], reference_norms: &[T]) -> Result<Self> {
        let (rows, k) = x.shape();
        if k == 0 {
            return Ok(Self { q: DMatrix::zeros(rows, 0), r_inv: DMatrix::zeros(0, 0) });
        }
        if rows < k {
            return Err(Error::RankDeficient(names.to_vec()));
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let tol = T::eps().sqrt();
        let deficient: Vec<String> = (0..k)
            .filter(|&c| {
                let reference = reference_norms[c].max(T::tiny());
                !(r[(c, c)].abs() > tol * reference)
            })
            .map(|c| names[c].clone())
            .collect();
        if !deficient.is_empty() {
            return Err(Error::RankDeficient(deficient));
        }
        let r_inv = r
            .clone()
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| Error::RankDeficient(names.to_vec()))?;
        Ok(Self { q: qr.q(), r_inv })
    }

    pub fn solve(&self, y: &DVector<T>) -> DVector<T> {
        &self.r_inv * (self.q.transpose() * y)
    }

    /// `(X'X)^{-1}`
    pub fn bread(&self) -> DMatrix<T> {
        &self.r_inv * self.r_inv.transpose()
    }

    /// Orthogonal projection of `y` on the column space.
    pub fn project(&self, y: &DVector<T>) -> DVector<T> {
        &self.q * (self.q.transpose() * y)
    }
}

/// Column norms.
pub(crate) fn column_norms<T: Real>(x: &DMatrix<T>) -> Vec<T> {
    x.column_iter().map(|c| c.norm()).collect()
}

/// Sandwich `B (X' diag(e^2) X) B`, scaled by `scale`.
pub(crate) fn sandwich<T: Real>(bread: &DMatrix<T>, x: &DMatrix<T>, e: &DVector<T>, scale: T) -> DMatrix<T> {
    let k = x.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for r in 0..x.nrows() {
        let e2 = e[r] * e[r];
        for a in 0..k {
            let xa = x[(r, a)] * e2;
            for b in 0..=a {
                meat[(a, b)] += xa * x[(r, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(b, a)] = meat[(a, b)];
        }
    }
    bread * meat * bread * scale
}

/// Indices of a maximal set of linearly independent columns, scanning left to right.
pub(crate) fn independent_columns<T: Real>(h: &DMatrix<T>) -> Vec<usize> {
    let tol = T::eps().sqrt();
    let mut basis: Vec<DVector<T>> = Vec::new();
    let mut keep = Vec::new();
    for c in 0..h.ncols() {
        let original = h.column(c).into_owned();
        let norm = original.norm();
        if norm <= T::zero() {
            continue;
        }
        let mut v = original;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, T::one());
            }
        }
        let rest = v.norm();
        if rest > tol * norm {
            basis.push(v / rest);
            keep.push(c);
        }
    }
    keep
}

pub(crate) struct TwoSls<T: Real> {
    pub delta: DVector<T>,
    /// First-stage fitted regressors.
    pub zhat: DMatrix<T>,
    /// Structural residuals `y - Z delta`.
    pub resid: DVector<T>,
    /// `(Zhat' Zhat)^{-1}`
    pub bread: DMatrix<T>,
    /// Instrument columns kept after dropping linear dependencies.
    pub instruments: DMatrix<T>,
}

/// Two-stage least squares of `y` on `z` with instrument matrix `h`.
pub(crate) fn two_sls<T: Real>(y: &DVector<T>, z: &DMatrix<T>, h: &DMatrix<T>, names: &[String]) -> Result<TwoSls<T>> {
    let keep = independent_columns(h);
    if keep.len() < z.ncols() {
        return Err(Error::RankDeficient(names.to_vec()));
    }
    let instruments = h.select_columns(&keep);
    let hq = QrLs::new(&instruments, &vec![String::new(); keep.len()], &column_norms(&instruments))?;
    let zhat = DMatrix::from_columns(&(0..z.ncols()).map(|c| hq.project(&z.column(c).into_owned())).collect::<Vec<_>>());
    let second = QrLs::new(&zhat, names, &column_norms(z))?;
    let delta = second.solve(y);
    let resid = y - z * &delta;
    Ok(TwoSls { delta, zhat, resid, bread: second.bread(), instruments })
}

/// Residual sum of squares of `y` on the columns of `x`.
pub(crate) fn rss<T: Real>(y: &DVector<T>, x: &DMatrix<T>) -> Result<T> {
    if x.ncols() == 0 {
        return Ok(y.norm_squared());
    }
    let keep = independent_columns(x);
    let xs = x.select_columns(&keep);
    let ls = QrLs::new(&xs, &vec![String::new(); keep.len()], &column_norms(&xs))?;
    Ok((y - ls.project(y)).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn design() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(20, 3, |r, c| ((r * 3 + c) as f64 * 0.61).sin() + if c == 0 { 1.0 } else { 0.0 });
        let y = DVector::from_fn(20, |r, _| 0.5 + 2.0 * x[(r, 1)] - x[(r, 2)] + (r as f64 * 1.3).cos() * 0.01);
        (x, y)
    }

    #[test]
    fn qr_matches_normal_equations() {
        let (x, y) = design();
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let ls = QrLs::new(&x, &names, &column_norms(&x)).unwrap();
        let beta = ls.solve(&y);
        let normal = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        for k in 0..3 {
            assert_relative_eq!(beta[k], normal[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn collinear_column_is_reported() {
        let (mut x, _) = design();
        let copy = x.column(1) * 2.0;
        x.set_column(2, &copy);
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        match QrLs::new(&x, &names, &column_norms(&x)) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["c".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_sls_with_exogenous_instrument_is_ols() {
        let (x, y) = design();
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let ols = QrLs::new(&x, &names, &column_norms(&x)).unwrap().solve(&y);
        let iv = two_sls(&y, &x, &x, &names).unwrap();
        for k in 0..3 {
            assert_relative_eq!(iv.delta[k], ols[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn dependent_instruments_are_dropped() {
        let (x, _) = design();
        let mut h = DMatrix::zeros(20, 4);
        h.columns_mut(0, 3).copy_from(&x);
        let dup = x.column(0) + x.column(2);
        h.set_column(3, &dup);
        assert_eq!(independent_columns(&h), vec![0, 1, 2]);
    }
}
