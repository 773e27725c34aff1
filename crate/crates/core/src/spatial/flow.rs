use super::{moments_from_entries, inverse_distance_weights, LagMode, Normalization, SpatialOperator, WeightMatrix, WeightMoments, WeightSpec};
use crate::error::{Error, Result};
use crate::panel::{pair_at, pair_position, PanelDataset};
use crate::scalar::Real;

/// Weight operator over the `n (n - 1)` ordered flows of one year, induced by
/// a country-level matrix.
///
/// Origin mode: `(Wy)_ij = c_ij * sum_{h != i, j} w_ih y_hj`; destination mode:
/// `(Wy)_ij = c_ij * sum_{k != i, j} w_jk y_ik`. With a row-stochastic base
/// `c_ij` rescales the admissible neighbours to sum to one; otherwise `c_ij = 1`.
#[derive(Debug, Clone)]
pub struct FlowWeight<T: Real> {
    base: WeightMatrix<T>,
    mode: LagMode,
    scale: Vec<T>,
}

impl<T: Real> FlowWeight<T> {
    pub fn new(base: WeightMatrix<T>, mode: LagMode) -> Self {
        let n = base.n();
        let renormalize = base.normalization() == Normalization::RowStochastic;
        let scale = (0..n * n.saturating_sub(1))
            .map(|p| {
                if !renormalize {
                    return T::one();
                }
                let (i, j) = pair_at(n, p);
                let excluded = match mode {
                    LagMode::Origin => base.get(i, j),
                    LagMode::Destination => base.get(j, i),
                };
                let mass = T::one() - excluded;
                if mass > T::eps() {
                    T::one() / mass
                } else {
                    T::zero()
                }
            })
            .collect();
        Self { base, mode, scale }
    }

    /// Inverse-distance flow weights from the dataset's distance matrix.
    pub fn from_spec(ds: &PanelDataset<T>, spec: &WeightSpec) -> Result<Self> {
        Ok(Self::new(inverse_distance_weights(ds.distance_km(), spec.normalization)?, spec.mode))
    }

    pub fn base(&self) -> &WeightMatrix<T> {
        &self.base
    }

    pub fn mode(&self) -> LagMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// Entry `W[(i, j), (a, b)]`.
    pub fn weight(&self, (i, j): (usize, usize), (a, b): (usize, usize)) -> T {
        let c = self.scale[pair_position(self.n(), i, j)];
        match self.mode {
            LagMode::Origin if b == j && a != i && a != j => c * self.base.get(i, a),
            LagMode::Destination if a == i && b != i && b != j => c * self.base.get(j, b),
            _ => T::zero(),
        }
    }

    fn lag_year(&self, y: &[T], out: &mut [T]) {
        let n = self.n();
        for (p, o) in out.iter_mut().enumerate() {
            let (i, j) = pair_at(n, p);
            let mut acc = T::zero();
            match self.mode {
                LagMode::Origin => {
                    for h in (0..n).filter(|&h| h != i && h != j) {
                        acc += self.base.get(i, h) * y[pair_position(n, h, j)];
                    }
                }
                LagMode::Destination => {
                    for k in (0..n).filter(|&k| k != i && k != j) {
                        acc += self.base.get(j, k) * y[pair_position(n, i, k)];
                    }
                }
            }
            *o = self.scale[p] * acc;
        }
    }

    /// Lag of a stacked panel vector (a whole number of years in canonical order).
    pub fn lag_panel(&self, y: &[T]) -> Result<Vec<T>> {
        let pairs = self.dim();
        if pairs == 0 || !y.len().is_multiple_of(pairs) {
            return Err(Error::DimensionMismatch { expected: pairs, found: y.len() });
        }
        let mut out = vec![T::zero(); y.len()];
        for (src, dst) in y.chunks(pairs).zip(out.chunks_mut(pairs)) {
            self.lag_year(src, dst);
        }
        Ok(out)
    }

    /// Block-diagonal operator over `years` stacked years.
    pub fn panel(&self, years: usize) -> PanelFlowOperator<'_, T> {
        PanelFlowOperator { flow: self, years }
    }
}

impl<T: Real> SpatialOperator<T> for FlowWeight<T> {
    fn dim(&self) -> usize {
        self.n() * self.n().saturating_sub(1)
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        self.lag_panel(x)
    }

    fn for_each_entry(&self, f: &mut dyn FnMut(usize, usize, T)) {
        let n = self.n();
        for p in 0..self.dim() {
            let (i, j) = pair_at(n, p);
            for m in (0..n).filter(|&m| m != i && m != j) {
                let (w, col) = match self.mode {
                    LagMode::Origin => (self.base.get(i, m), pair_position(n, m, j)),
                    LagMode::Destination => (self.base.get(j, m), pair_position(n, i, m)),
                };
                let w = self.scale[p] * w;
                if w != T::zero() {
                    f(p, col, w);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PanelFlowOperator<'a, T: Real> {
    flow: &'a FlowWeight<T>,
    years: usize,
}

impl<T: Real> SpatialOperator<T> for PanelFlowOperator<'_, T> {
    fn dim(&self) -> usize {
        self.flow.dim() * self.years
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        self.flow.lag_panel(x)
    }

    fn for_each_entry(&self, f: &mut dyn FnMut(usize, usize, T)) {
        let d = self.flow.dim();
        for t in 0..self.years {
            self.flow.for_each_entry(&mut |a, b, w| f(t * d + a, t * d + b, w));
        }
    }

    fn moments(&self) -> WeightMoments<T> {
        let mut entries = Vec::new();
        self.flow.for_each_entry(&mut |a, b, w| entries.push((a, b, w)));
        let one = moments_from_entries(self.flow.dim(), &mut entries);
        let k = T::from_usize_lossy(self.years);
        WeightMoments { s0: one.s0 * k, sum_sq: one.sum_sq * k, sum_cross: one.sum_cross * k, s2: one.s2 * k }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn base(n: usize, norm: Normalization) -> WeightMatrix<f64> {
        let d = DMatrix::from_fn(n, n, |i, j| ((i as f64 - j as f64).abs() + 0.5 * (i + j) as f64) * 10.0 * f64::from(i != j));
        inverse_distance_weights(&d, norm).unwrap()
    }

    #[test]
    fn three_country_origin_lag_matches_hand_value() {
        // n = 3, unnormalized: the only admissible neighbour of flow (2, 0) is (1, 0)
        let w = base(3, Normalization::None);
        let fw = FlowWeight::new(w.clone(), LagMode::Origin);
        let mut y = vec![0.0; 6];
        y[pair_position(3, 1, 0)] = 5.0;
        let lag = fw.lag_panel(&y).unwrap();
        assert_relative_eq!(lag[pair_position(3, 2, 0)], w.get(2, 1) * 5.0, epsilon = 1e-15);
    }

    #[test]
    fn row_stochastic_flow_weights_preserve_constants() {
        for mode in [LagMode::Origin, LagMode::Destination] {
            let fw = FlowWeight::new(base(6, Normalization::RowStochastic), mode);
            let lag = fw.lag_panel(&vec![2.5; 2 * fw.dim()]).unwrap();
            lag.iter().for_each(|&v| assert_relative_eq!(v, 2.5, epsilon = 1e-13));
        }
    }

    #[test]
    fn entries_agree_with_apply() {
        for mode in [LagMode::Origin, LagMode::Destination] {
            let fw = FlowWeight::new(base(5, Normalization::RowStochastic), mode);
            let d = fw.dim();
            let mut dense = DMatrix::zeros(d, d);
            fw.for_each_entry(&mut |a, b, w| dense[(a, b)] = w);
            let x: Vec<f64> = (0..d).map(|k| (k as f64 * 0.37).sin()).collect();
            let lag = fw.apply(&x).unwrap();
            let dense_lag = &dense * nalgebra::DVector::from_vec(x);
            for a in 0..d {
                assert_relative_eq!(lag[a], dense_lag[a], epsilon = 1e-14);
                let (i, j) = pair_at(5, a);
                for b in 0..d {
                    assert_eq!(dense[(a, b)], fw.weight((i, j), pair_at(5, b)));
                }
            }
        }
    }

    #[test]
    fn panel_moments_scale_with_years() {
        let fw = FlowWeight::new(base(4, Normalization::RowStochastic), LagMode::Origin);
        let one = fw.moments();
        let three = fw.panel(3).moments();
        let mut entries = Vec::new();
        fw.panel(3).for_each_entry(&mut |a, b, w| entries.push((a, b, w)));
        let direct = moments_from_entries(3 * fw.dim(), &mut entries);
        assert_relative_eq!(three.s0, 3.0 * one.s0, epsilon = 1e-12);
        assert_relative_eq!(three.s2, direct.s2, epsilon = 1e-12);
        assert_relative_eq!(three.sum_cross, direct.sum_cross, epsilon = 1e-12);
    }
}
