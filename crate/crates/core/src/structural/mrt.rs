//! Multilateral resistance terms as the solution of a matrix scaling problem.
//!
//! With `u_i = Pi_i^(1-sigma)` and `v_j = P_j^(1-sigma)` the system reads
//! `u_i = sum_j A_ij / v_j`, `v_j = sum_i B_ij / u_i`, where `A` and `B` are the
//! kernel `K` divided by its row and column targets. The iteration is a damped
//! Jacobi sweep on `(ln u, ln v)` with `P_anchor = 1` imposed after every step.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StructuralWorld;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How a panel of worlds is mapped to resistance terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MrtMode {
    /// One system per year.
    PerYear,
    /// One system for the whole panel with year-constant terms: markets clear
    /// in aggregate over the years.
    #[default]
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrtSolution<T> {
    pub sigma: T,
    /// Outward resistance `Pi_i`.
    pub pi: Vec<T>,
    /// Inward resistance `P_j`, with `p[anchor] == 1` unless renormalized.
    pub p: Vec<T>,
    pub anchor: usize,
    pub mode: MrtMode,
    pub iterations: usize,
    /// Residual of the power-scale system at the returned point.
    pub residual: T,
    pub tol: T,
}

impl<T: Real> MrtSolution<T> {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn log_pi(&self) -> Vec<T> {
        self.pi.iter().map(|v| v.ln()).collect()
    }

    pub fn log_p(&self) -> Vec<T> {
        self.p.iter().map(|v| v.ln()).collect()
    }

    /// Same terms with the free scale split evenly, so that the means of
    /// `ln Pi` and `ln P` coincide. Products `Pi_i P_j` are unchanged.
    pub fn symmetric(&self) -> Self {
        let n = T::from_usize_lossy(self.n());
        let lpi: T = self.pi.iter().map(|v| v.ln()).sum::<T>() / n;
        let lp: T = self.p.iter().map(|v| v.ln()).sum::<T>() / n;
        let c = ((lpi - lp) / T::lit(2.0)).exp();
        let mut out = self.clone();
        out.pi.iter_mut().for_each(|v| *v /= c);
        out.p.iter_mut().for_each(|v| *v *= c);
        out
    }

    fn powers(&self) -> (Vec<T>, Vec<T>) {
        let e = T::one() - self.sigma;
        (self.pi.iter().map(|&v| e * v.ln()).collect(), self.p.iter().map(|&v| e * v.ln()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrtSolver {
    pub tol: f64,
    pub max_iter: usize,
    /// Geometric damping `lambda` in `(0, 1]`.
    pub damping: f64,
    pub anchor: usize,
}

impl Default for MrtSolver {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200_000, damping: 0.5, anchor: 0 }
    }
}

/// Solves one world with the default damping and anchor.
pub fn solve_mrt<T: Real>(world: &StructuralWorld<T>, tol: f64, max_iter: usize) -> Result<MrtSolution<T>> {
    MrtSolver { tol, max_iter, ..MrtSolver::default() }.solve(world)
}

/// Solves a panel of worlds; pooled mode returns the shared solution once per year.
pub fn solve_mrt_panel<T: Real>(worlds: &[StructuralWorld<T>], tol: f64, max_iter: usize, mode: MrtMode) -> Result<Vec<MrtSolution<T>>> {
    MrtSolver { tol, max_iter, ..MrtSolver::default() }.solve_panel(worlds, mode)
}

/// Kernel and targets of a scaling problem.
pub(crate) struct ScalingProblem<T> {
    pub ln_a: DMatrix<T>,
    pub ln_b: DMatrix<T>,
}

impl<T: Real> ScalingProblem<T> {
    pub fn new(kernel: &DMatrix<T>, rows: &[T], cols: &[T]) -> Self {
        let n = kernel.nrows();
        let log = |k: T, d: T| if k > T::zero() { (k / d).ln() } else { T::lit(f64::NEG_INFINITY) };
        Self {
            ln_a: DMatrix::from_fn(n, n, |i, j| log(kernel[(i, j)], rows[i])),
            ln_b: DMatrix::from_fn(n, n, |i, j| log(kernel[(i, j)], cols[j])),
        }
    }

    fn n(&self) -> usize {
        self.ln_a.nrows()
    }

    /// `ln sum_j A_ij exp(-lv_j)` for every `i`.
    fn row_update(&self, lv: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = log_sum_exp((0..self.n()).map(|j| self.ln_a[(i, j)] - lv[j]));
        }
    }

    /// `ln sum_i B_ij exp(-lu_i)` for every `j`.
    fn col_update(&self, lu: &[T], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = log_sum_exp((0..self.n()).map(|i| self.ln_b[(i, j)] - lu[i]));
        }
    }

    /// Relative residual `|x - F(x)| / |x|` on the power scale, given the update.
    fn residual(current: &[T], update: &[T]) -> T {
        current.iter().zip(update).fold(T::zero(), |acc, (&c, &u)| acc.max((T::one() - (u - c).exp()).abs()))
    }

    /// Residual of an arbitrary point `(lu, lv)`.
    pub fn residual_at(&self, lu: &[T], lv: &[T]) -> T {
        let n = self.n();
        let (mut fu, mut fv) = (vec![T::zero(); n], vec![T::zero(); n]);
        self.row_update(lv, &mut fu);
        self.col_update(lu, &mut fv);
        Self::residual(lu, &fu).max(Self::residual(lv, &fv))
    }

    pub fn solve(&self, solver: &MrtSolver) -> Result<(Vec<T>, Vec<T>, usize, T)> {
        let n = self.n();
        if solver.anchor >= n {
            return Err(Error::InvalidWorld(format!("anchor {} out of range", solver.anchor)));
        }
        if !(solver.damping > 0.0 && solver.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} not in (0, 1]", solver.damping)));
        }
        let tol = T::lit(solver.tol).max(T::eps() * T::lit(64.0));
        let lambda = T::lit(solver.damping);
        let (mut lu, mut lv) = (vec![T::zero(); n], vec![T::zero(); n]);
        let (mut fu, mut fv) = (vec![T::zero(); n], vec![T::zero(); n]);
        let mut residual = T::max_value().unwrap_or_else(T::one);
        for iter in 0..=solver.max_iter {
            self.row_update(&lv, &mut fu);
            self.col_update(&lu, &mut fv);
            residual = Self::residual(&lu, &fu).max(Self::residual(&lv, &fv));
            if !residual.is_finite() {
                break;
            }
            if residual <= tol {
                return Ok((lu, lv, iter, residual));
            }
            for (x, &f) in lu.iter_mut().zip(&fu) {
                *x += lambda * (f - *x);
            }
            for (x, &f) in lv.iter_mut().zip(&fv) {
                *x += lambda * (f - *x);
            }
            let c = lv[solver.anchor];
            lv.iter_mut().for_each(|x| *x -= c);
            lu.iter_mut().for_each(|x| *x += c);
        }
        Err(Error::non_convergence(solver.max_iter, residual.to_f64_lossy()))
    }
}

fn log_sum_exp<T: Real>(terms: impl Iterator<Item = T> + Clone) -> T {
    let m = terms.clone().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b));
    let s: T = terms.map(|t| (t - m).exp()).sum();
    m + s.ln()
}

impl MrtSolver {
    pub fn solve<T: Real>(&self, world: &StructuralWorld<T>) -> Result<MrtSolution<T>> {
        let (x, e) = (world.output(), world.expenditure());
        let problem = ScalingProblem::new(&world.kernel(), x, e);
        let (lu, lv, iterations, residual) = problem.solve(self)?;
        Ok(self.solution(world.sigma(), &lu, &lv, MrtMode::PerYear, iterations, residual))
    }

    /// Shared terms for all worlds: markets clear in aggregate over years.
    pub fn solve_pooled<T: Real>(&self, worlds: &[StructuralWorld<T>]) -> Result<MrtSolution<T>> {
        let (sigma, n) = check_panel(worlds)?;
        let mut kernel = DMatrix::zeros(n, n);
        let (mut rows, mut cols) = (vec![T::zero(); n], vec![T::zero(); n]);
        for w in worlds {
            kernel += w.kernel();
            rows.iter_mut().zip(w.output()).for_each(|(r, &x)| *r += x);
            cols.iter_mut().zip(w.expenditure()).for_each(|(c, &e)| *c += e);
        }
        let problem = ScalingProblem::new(&kernel, &rows, &cols);
        let (lu, lv, iterations, residual) = problem.solve(self)?;
        Ok(self.solution(sigma, &lu, &lv, MrtMode::Pooled, iterations, residual))
    }

    pub fn solve_panel<T: Real>(&self, worlds: &[StructuralWorld<T>], mode: MrtMode) -> Result<Vec<MrtSolution<T>>> {
        check_panel(worlds)?;
        match mode {
            MrtMode::PerYear => worlds.par_iter().map(|w| self.solve(w)).collect(),
            MrtMode::Pooled => {
                let s = self.solve_pooled(worlds)?;
                Ok(vec![s; worlds.len()])
            }
        }
    }

    fn solution<T: Real>(&self, sigma: T, lu: &[T], lv: &[T], mode: MrtMode, iterations: usize, residual: T) -> MrtSolution<T> {
        let e = T::one() - sigma;
        let mut p: Vec<T> = lv.iter().map(|&v| (v / e).exp()).collect();
        p[self.anchor] = T::one();
        MrtSolution {
            sigma,
            pi: lu.iter().map(|&u| (u / e).exp()).collect(),
            p,
            anchor: self.anchor,
            mode,
            iterations,
            residual,
            tol: T::lit(self.tol).max(T::eps() * T::lit(64.0)),
        }
    }
}

fn check_panel<T: Real>(worlds: &[StructuralWorld<T>]) -> Result<(T, usize)> {
    let first = worlds.first().ok_or_else(|| Error::InvalidWorld("empty panel".into()))?;
    for w in worlds {
        if w.n() != first.n() || w.sigma() != first.sigma() {
            return Err(Error::InvalidWorld("worlds differ in size or elasticity".into()));
        }
    }
    Ok((first.sigma(), first.n()))
}

/// Residual of `mrt` in the single-world system of `world`.
pub fn mrt_residual<T: Real>(world: &StructuralWorld<T>, mrt: &MrtSolution<T>) -> Result<T> {
    if mrt.n() != world.n() {
        return Err(Error::DimensionMismatch { expected: world.n(), found: mrt.n() });
    }
    let problem = ScalingProblem::new(&world.kernel(), world.output(), world.expenditure());
    let (lu, lv) = mrt.powers();
    Ok(problem.residual_at(&lu, &lv))
}

/// Pooled-system residual of a shared solution.
pub fn pooled_residual<T: Real>(worlds: &[StructuralWorld<T>], mrt: &MrtSolution<T>) -> Result<T> {
    let (_, n) = check_panel(worlds)?;
    let mut kernel = DMatrix::zeros(n, n);
    let (mut rows, mut cols) = (vec![T::zero(); n], vec![T::zero(); n]);
    for w in worlds {
        kernel += w.kernel();
        rows.iter_mut().zip(w.output()).for_each(|(r, &x)| *r += x);
        cols.iter_mut().zip(w.expenditure()).for_each(|(c, &e)| *c += e);
    }
    let (lu, lv) = mrt.powers();
    Ok(ScalingProblem::new(&kernel, &rows, &cols).residual_at(&lu, &lv))
}

/// `Y_ij = E_j X_i / X * (T_ij / (Pi_i P_j))^(1 - sigma)` without any check.
pub fn implied_flows<T: Real>(world: &StructuralWorld<T>, mrt: &MrtSolution<T>) -> DMatrix<T> {
    let n = world.n();
    let e = T::one() - world.sigma();
    let total = world.total();
    DMatrix::from_fn(n, n, |i, j| {
        let t = world.cost(i, j);
        if !t.is_finite() {
            return T::zero();
        }
        world.expenditure()[j] * world.output()[i] / total * (t / (mrt.pi[i] * mrt.p[j])).powf(e)
    })
}

/// Predicted bilateral flows; fails with `StaleSolution` when `mrt` does not
/// solve this world's system.
pub fn predict_flows<T: Real>(world: &StructuralWorld<T>, mrt: &MrtSolution<T>) -> Result<DMatrix<T>> {
    let r = mrt_residual(world, mrt)?;
    if !(r <= mrt.tol * T::lit(10.0)) {
        return Err(Error::StaleSolution(r.to_f64_lossy()));
    }
    Ok(implied_flows(world, mrt))
}
