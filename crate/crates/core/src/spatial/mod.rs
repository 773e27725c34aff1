//! Spatial weights over countries and over ordered flows, plus residual
//! diagnostics.

mod diagnostics;
mod flow;
mod weights;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub use diagnostics::{lm_spatial_lag_test, morans_i, morans_i_permutation, LmTest, MoranResult};
pub use flow::{FlowWeight, PanelFlowOperator};
pub use weights::{distances_from_coordinates, haversine_km, inverse_distance_weights, Provenance, WeightMatrix};

/// Normalization applied to a raw weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Rows sum to one.
    #[default]
    RowStochastic,
    /// Divided by the spectral radius.
    Spectral,
}

/// Which side of a flow its neighbours share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    /// Neighbours of `(i, j)` are `(h, j)` with `h` near `i`.
    #[default]
    Origin,
    /// Neighbours of `(i, j)` are `(i, k)` with `k` near `j`.
    Destination,
}

/// Inverse-distance weights built from the dataset's own distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct WeightSpec {
    pub normalization: Normalization,
    pub mode: LagMode,
}

/// Sums over the entries of a weight operator needed by Moran's I and the
/// LM lag test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMoments<T> {
    /// `sum w_ab`
    pub s0: T,
    /// `sum w_ab^2`, the trace of `W'W`.
    pub sum_sq: T,
    /// `sum w_ab w_ba`, the trace of `WW`.
    pub sum_cross: T,
    /// `sum_a (w_a. + w_.a)^2`
    pub s2: T,
}

impl<T: Real> WeightMoments<T> {
    /// `(1/2) sum (w_ab + w_ba)^2`
    pub fn s1(&self) -> T {
        self.sum_sq + self.sum_cross
    }
}

/// Linear operator `x -> Wx` with a sparse entry view.
pub trait SpatialOperator<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// `Wx`; fails with `DimensionMismatch` when `x.len() != dim()`.
    fn apply(&self, x: &[T]) -> crate::Result<Vec<T>>;

    /// Visits every structurally non-zero entry `(row, col, w)` once.
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, usize, T));

    fn moments(&self) -> WeightMoments<T> {
        let dim = self.dim();
        let mut entries = Vec::new();
        self.for_each_entry(&mut |a, b, w| entries.push((a, b, w)));
        moments_from_entries(dim, &mut entries)
    }
}

pub(crate) fn moments_from_entries<T: Real>(dim: usize, entries: &mut [(usize, usize, T)]) -> WeightMoments<T> {
    entries.sort_unstable_by_key(|&(a, b, _)| (a, b));
    let lookup = |a: usize, b: usize| {
        entries.binary_search_by_key(&(a, b), |&(r, c, _)| (r, c)).map(|k| entries[k].2).unwrap_or_else(|_| T::zero())
    };
    let mut row = vec![T::zero(); dim];
    let mut col = vec![T::zero(); dim];
    let (mut s0, mut sum_sq, mut sum_cross) = (T::zero(), T::zero(), T::zero());
    for &(a, b, w) in entries.iter() {
        s0 += w;
        sum_sq += w * w;
        sum_cross += w * lookup(b, a);
        row[a] += w;
        col[b] += w;
    }
    let s2 = row.iter().zip(&col).map(|(&r, &c)| (r + c) * (r + c)).sum();
    WeightMoments { s0, sum_sq, sum_cross, s2 }
}
