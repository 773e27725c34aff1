//! Structural gravity: worlds, multilateral resistance, synthetic panels.

mod generator;
mod mrt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use generator::{generate_synthetic, GeneratorConfig, GroundTruth, SyntheticPanel};
pub use mrt::{
    implied_flows, mrt_residual, pooled_residual, predict_flows, solve_mrt, solve_mrt_panel, MrtMode, MrtSolution, MrtSolver,
};

/// Convention for internal (`i -> i`) trade, which panels never observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomesticTrade {
    /// No internal trade: `T_ii` is infinite, sizes are export and import totals.
    #[default]
    Excluded,
    /// Costless internal trade, `T_ii = 1`.
    Frictionless,
}

impl DomesticTrade {
    pub fn diagonal_cost<T: Real>(self) -> T {
        match self {
            DomesticTrade::Excluded => T::lit(f64::INFINITY),
            DomesticTrade::Frictionless => T::one(),
        }
    }
}

/// One cross-section of the structural model: elasticity `sigma`, bilateral
/// trade costs `T_ij >= 1` (infinite means no trade), expenditures `E_j` and
/// outputs `X_i` with `sum E = sum X`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralWorld<T> {
    sigma: T,
    costs: DMatrix<T>,
    expenditure: Vec<T>,
    output: Vec<T>,
    total: T,
}

impl<T: Real> StructuralWorld<T> {
    pub fn new(sigma: T, costs: DMatrix<T>, expenditure: Vec<T>, output: Vec<T>) -> Result<Self> {
        let n = output.len();
        if n < 2 {
            return Err(Error::InvalidWorld("at least two countries are required".into()));
        }
        if !(sigma > T::one()) || !sigma.is_finite() {
            return Err(Error::InvalidWorld(format!("elasticity {sigma} must exceed 1")));
        }
        if expenditure.len() != n || costs.nrows() != n || costs.ncols() != n {
            return Err(Error::InvalidWorld("dimensions of costs, expenditure and output disagree".into()));
        }
        if costs.iter().any(|&t| !(t >= T::one())) {
            return Err(Error::InvalidWorld("trade costs must be at least 1".into()));
        }
        for k in 0..n {
            if costs.row(k).iter().all(|t| !t.is_finite()) || costs.column(k).iter().all(|t| !t.is_finite()) {
                return Err(Error::InvalidWorld(format!("country {k} cannot trade with anyone")));
            }
        }
        if expenditure.iter().chain(&output).any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidWorld("expenditures and outputs must be positive and finite".into()));
        }
        let total: T = output.iter().copied().sum();
        let spent: T = expenditure.iter().copied().sum();
        let tol = T::lit(1e-9).max(T::eps() * T::lit(64.0));
        if (total - spent).abs() > tol * total {
            return Err(Error::InvalidWorld(format!("total expenditure {spent} differs from total output {total}")));
        }
        Ok(Self { sigma, costs, expenditure, output, total })
    }

    pub fn n(&self) -> usize {
        self.output.len()
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn costs(&self) -> &DMatrix<T> {
        &self.costs
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> T {
        self.costs[(i, j)]
    }

    pub fn expenditure(&self) -> &[T] {
        &self.expenditure
    }

    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn total(&self) -> T {
        self.total
    }

    /// `K_ij = T_ij^(1 - sigma) E_j X_i / X`.
    pub fn kernel(&self) -> DMatrix<T> {
        let e = T::one() - self.sigma;
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let t = self.costs[(i, j)];
            if t.is_finite() {
                t.powf(e) * self.expenditure[j] * self.output[i] / self.total
            } else {
                T::zero()
            }
        })
    }

    /// Same world with every trade cost multiplied by `lambda`.
    pub fn scale_costs(&self, lambda: T) -> Result<Self> {
        Self::new(self.sigma, self.costs.map(|t| t * lambda), self.expenditure.clone(), self.output.clone())
    }

    /// Producer prices times preference weights, `beta_i p_i`, implied by
    /// `(beta_i p_i Pi_i)^(1 - sigma) = X_i / X`.
    pub fn scaled_prices(&self, mrt: &MrtSolution<T>) -> Vec<T> {
        let e = T::one() - self.sigma;
        self.output.iter().zip(&mrt.pi).map(|(&x, &pi)| (x / self.total).powf(T::one() / e) / pi).collect()
    }
}
