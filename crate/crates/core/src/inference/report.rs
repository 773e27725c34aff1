use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::ValidationConfig;
use super::components::DistanceLoading;
use super::residuals::AnovaTable;
use crate::error::Result;
use crate::scalar::Real;
use crate::structural::MrtMode;

/// Reference distribution for the bootstrap t statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Share of replication means at least as far from the grand mean as the
    /// grand mean is from zero.
    #[default]
    Percentile,
    /// Student t with `B - 1` degrees of freedom.
    StudentT,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Percentile => "bootstrap percentile",
            Reference::StudentT => "student-t",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "distance-removable")]
    DistanceRemovable,
    #[serde(rename = "not-removable")]
    NotRemovable,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::DistanceRemovable => "distance-removable",
            Decision::NotRemovable => "not-removable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ResidualSummary {
    pub fn of<T: Real>(r: &[T]) -> Self {
        let v: Vec<f64> = r.iter().map(|x| x.to_f64_lossy()).collect();
        Self {
            mean: crate::scalar::mean(&v),
            sd: crate::scalar::sample_sd(&v),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub anova_r2: f64,
    pub anova: AnovaTable,
    pub t_stat: f64,
    pub p_value: f64,
    pub reference: Reference,
    /// Successful bootstrap replications `B`.
    pub replications: usize,
    pub skipped: usize,
    /// Mean of the replication means.
    pub grand_mean: f64,
    /// Standard deviation of the replication means.
    pub se: f64,
    pub alpha: f64,
    /// Summary of the base structural residuals (no free constant).
    pub residuals: ResidualSummary,
    pub decision: Decision,
    pub sigma: f64,
    pub mrt_mode: MrtMode,
    pub distance: DistanceLoading,
    pub seed: Option<u64>,
}

impl ValidationReport {
    pub(crate) fn with_settings(mut self, config: &ValidationConfig) -> Self {
        self.distance = config.distance;
        self.seed = Some(config.seed);
        self
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        let mode = match self.mrt_mode {
            MrtMode::PerYear => "per_year",
            MrtMode::Pooled => "pooled",
        };
        let distance = match self.distance {
            DistanceLoading::Unit => "unit".to_string(),
            DistanceLoading::Estimated(psi) => format!("estimated({psi})"),
        };
        vec![
            ("sigma", self.sigma.to_string()),
            ("mrt_mode", mode.into()),
            ("distance_loading", distance),
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            ("pairs", self.anova.pairs.to_string()),
            ("anova_r2", format!("{:.6}", self.anova_r2)),
            ("var_theta", format!("{:.6e}", self.anova.var_theta)),
            ("var_structural", format!("{:.6e}", self.anova.var_structural)),
            ("var_residual", format!("{:.6e}", self.anova.var_residual)),
            ("covariance", format!("{:.6e}", self.anova.covariance)),
            ("residual_mean", format!("{:.6e}", self.residuals.mean)),
            ("residual_sd", format!("{:.6e}", self.residuals.sd)),
            ("residual_min", format!("{:.6e}", self.residuals.min)),
            ("residual_max", format!("{:.6e}", self.residuals.max)),
            ("replications", self.replications.to_string()),
            ("skipped", self.skipped.to_string()),
            ("grand_mean", format!("{:.6e}", self.grand_mean)),
            ("se", format!("{:.6e}", self.se)),
            ("t_stat", format!("{:.4}", self.t_stat)),
            ("p_value", format!("{:.4}", self.p_value)),
            ("reference", self.reference.to_string()),
            ("alpha", self.alpha.to_string()),
            ("decision", self.decision.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Pair-effect validation\n");
        out.push_str(&format!("  sigma {}  resistance terms {}\n", self.sigma, if self.mrt_mode == MrtMode::Pooled { "pooled" } else { "per year" }));
        out.push_str("\nVariance decomposition of the pair effects\n");
        out.push_str(&format!("  pairs            {}\n", self.anova.pairs));
        out.push_str(&format!("  V(theta)         {:.6e}\n", self.anova.var_theta));
        out.push_str(&format!("  V(structural)    {:.6e}\n", self.anova.var_structural));
        out.push_str(&format!("  V(residual)      {:.6e}\n", self.anova.var_residual));
        out.push_str(&format!("  2 Cov            {:.6e}\n", self.anova.covariance));
        out.push_str(&format!("  R^2              {:.6}\n", self.anova_r2));
        out.push_str("\nStructural residual r_ij\n");
        out.push_str(&format!(
            "  mean {:.6e}  sd {:.6e}  min {:.6e}  max {:.6e}\n",
            self.residuals.mean, self.residuals.sd, self.residuals.min, self.residuals.max
        ));
        out.push_str(&format!("\nBootstrap t-test of H0: r_ij = 0 (B = {}, skipped {})\n", self.replications, self.skipped));
        out.push_str(&format!("  mean of means    {:.6e}\n", self.grand_mean));
        out.push_str(&format!("  standard error   {:.6e}\n", self.se));
        out.push_str(&format!("  t = {:.4}, Pr(|T|>|t|) = {:.4} ({})\n", self.t_stat, self.p_value, self.reference));
        out.push_str(&format!("  decision at alpha = {}: {}\n", self.alpha, self.decision));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}
