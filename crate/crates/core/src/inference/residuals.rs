use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::pair_at;
use crate::scalar::{mean, variance, Real};

/// Treatment of the free additive constant between pair effects and the
/// structural terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstantPolicy {
    /// No constant: levels are compared as they are.
    Raw,
    /// Subtract the mean difference.
    #[default]
    MeanCentered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralResiduals<T> {
    /// `r_ij` by pair position.
    pub r: Vec<T>,
    /// `outward_i + inward_j + cost_ij` by pair position.
    pub structural: Vec<T>,
    /// Constant removed from the difference.
    pub constant: T,
}

impl<T: Real> StructuralResiduals<T> {
    pub fn mean(&self) -> T {
        mean(&self.r)
    }
}

/// `r_ij = theta_ij - (outward_i + inward_j + cost_ij) - c`.
pub fn structural_residuals<T: Real>(
    theta: &[T],
    outward: &[T],
    inward: &[T],
    cost: &[T],
    policy: ConstantPolicy,
) -> Result<StructuralResiduals<T>> {
    let n = outward.len();
    if inward.len() != n {
        return Err(Error::IndexMismatch(format!("{n} outward terms but {} inward terms", inward.len())));
    }
    if n < 2 || theta.len() != n * (n - 1) || cost.len() != theta.len() {
        return Err(Error::IndexMismatch(format!(
            "{n} countries need {} pairs; got {} pair effects and {} cost terms",
            n * n.saturating_sub(1),
            theta.len(),
            cost.len()
        )));
    }
    let structural: Vec<T> = cost
        .iter()
        .enumerate()
        .map(|(p, &c)| {
            let (i, j) = pair_at(n, p);
            outward[i] + inward[j] + c
        })
        .collect();
    residuals_against(theta, structural, policy)
}

pub(crate) fn residuals_against<T: Real>(theta: &[T], structural: Vec<T>, policy: ConstantPolicy) -> Result<StructuralResiduals<T>> {
    if theta.len() != structural.len() {
        return Err(Error::IndexMismatch(format!("{} pair effects but {} structural terms", theta.len(), structural.len())));
    }
    let diff: Vec<T> = theta.iter().zip(&structural).map(|(&a, &b)| a - b).collect();
    let constant = match policy {
        ConstantPolicy::Raw => T::zero(),
        ConstantPolicy::MeanCentered => mean(&diff),
    };
    Ok(StructuralResiduals { r: diff.iter().map(|&d| d - constant).collect(), structural, constant })
}

/// Constrained variance decomposition of the pair effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// `1 - V(r) / V(theta)`.
    pub r2: f64,
    pub var_theta: f64,
    pub var_structural: f64,
    pub var_residual: f64,
    /// `2 Cov(S, r)`, so that `V(theta) = V(S) + V(r) + covariance`.
    pub covariance: f64,
    pub pairs: usize,
}

/// R-squared of the pair effects against the structural terms with intercept
/// zero and unit slope (up to the free constant).
pub fn anova_r2<T: Real>(theta: &[T], structural: &[T]) -> Result<AnovaTable> {
    if theta.len() != structural.len() {
        return Err(Error::IndexMismatch(format!("{} pair effects but {} structural terms", theta.len(), structural.len())));
    }
    if theta.len() < 3 {
        return Err(Error::DegenerateVariance(format!("{} pairs (need at least 3)", theta.len())));
    }
    let res = residuals_against(theta, structural.to_vec(), ConstantPolicy::MeanCentered)?;
    let var_theta = variance(theta);
    if !(var_theta > T::zero()) {
        return Err(Error::DegenerateVariance("pair effects are constant".into()));
    }
    let var_structural = variance(structural);
    let var_residual = variance(&res.r);
    let ms = mean(structural);
    let cov = res.r.iter().zip(structural).map(|(&r, &s)| r * (s - ms)).sum::<T>() / T::from_usize_lossy(theta.len());
    Ok(AnovaTable {
        r2: (T::one() - var_residual / var_theta).to_f64_lossy(),
        var_theta: var_theta.to_f64_lossy(),
        var_structural: var_structural.to_f64_lossy(),
        var_residual: var_residual.to_f64_lossy(),
        covariance: (T::lit(2.0) * cov).to_f64_lossy(),
        pairs: theta.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let outward: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let inward: Vec<f64> = (0..n).map(|j| (j as f64 * 1.3).cos()).collect();
        let cost: Vec<f64> = (0..n * (n - 1)).map(|p| -(p as f64 * 0.11).cos() - 2.0).collect();
        (outward, inward, cost)
    }

    #[test]
    fn exact_structure_has_zero_raw_residual() {
        let (o, d, c) = example(5);
        let theta: Vec<f64> = (0..20)
            .map(|p| {
                let (i, j) = pair_at(5, p);
                o[i] + d[j] + c[p]
            })
            .collect();
        let raw = structural_residuals(&theta, &o, &d, &c, ConstantPolicy::Raw).unwrap();
        assert!(raw.r.iter().all(|r| r.abs() < 1e-15));
        let shifted: Vec<f64> = theta.iter().map(|t| t + 5.0).collect();
        let raw = structural_residuals(&shifted, &o, &d, &c, ConstantPolicy::Raw).unwrap();
        assert!(raw.r.iter().all(|r| (r - 5.0).abs() < 1e-12));
        let centered = structural_residuals(&shifted, &o, &d, &c, ConstantPolicy::MeanCentered).unwrap();
        assert!(centered.r.iter().all(|r| r.abs() < 1e-12));
        assert_relative_eq!(centered.constant, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn length_errors() {
        let (o, d, c) = example(4);
        assert!(matches!(structural_residuals(&c[..5], &o, &d, &c, ConstantPolicy::Raw), Err(Error::IndexMismatch(_))));
        assert!(matches!(structural_residuals(&c, &o, &d[..3], &c, ConstantPolicy::Raw), Err(Error::IndexMismatch(_))));
    }

    #[test]
    fn anova_perfect_fit_and_degenerate_cases() {
        let s: Vec<f64> = (0..12).map(|k| (k as f64).sqrt()).collect();
        let theta: Vec<f64> = s.iter().map(|v| v + 3.0).collect();
        let table = anova_r2(&theta, &s).unwrap();
        assert_eq!(table.r2, 1.0);
        assert!(matches!(anova_r2(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), Err(Error::DegenerateVariance(_))));
        assert!(matches!(anova_r2(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn variance_table_adds_up() {
        let s: Vec<f64> = (0..30).map(|k| (k as f64 * 0.37).sin()).collect();
        let theta: Vec<f64> = s.iter().enumerate().map(|(k, v)| v + 0.1 * (k as f64 * 2.1).cos()).collect();
        let t = anova_r2(&theta, &s).unwrap();
        assert_relative_eq!(t.var_theta, t.var_structural + t.var_residual + t.covariance, epsilon = 1e-12);
        assert!(t.r2 <= 1.0);
    }
}
