use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spgravity::inference::{DistanceLoading, Reference, ValidationConfig};
use spgravity::spatial::{LagMode, Normalization, WeightSpec};
use spgravity::structural::{DomesticTrade, MrtMode};
use spgravity::{Error, GeneratorConfig, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Loading of log distance on trade costs used by `validate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadingPolicy {
    #[default]
    Unit,
    /// Distance coefficient of the model with distance.
    Estimated,
}

/// Every parameter of every command, as one flat table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,

    /// Directory holding `panel.csv`, `schema.toml` and optionally `distances.csv`.
    pub data: PathBuf,
    /// Flows and size covariates in levels rather than logs.
    pub log_levels: bool,

    pub countries: usize,
    pub years: usize,
    pub first_year: i32,
    pub sigma: f64,
    pub rho: f64,
    pub noise_sd: f64,
    pub tv_cost_sd: f64,
    pub size_shock_sd: f64,
    pub distance_share: f64,

    pub with_dist: bool,
    pub sar: bool,
    pub normalization: Normalization,
    pub lag_mode: LagMode,
    pub instrument_order: usize,

    pub replications: usize,
    pub alpha: f64,
    pub mrt_mode: MrtMode,
    pub distance_loading: LoadingPolicy,
    pub reference: Reference,
    pub rescale_residuals: bool,
    pub max_failure_share: f64,
    pub save_draws: bool,

    /// Coefficient tables (or `estimate` output directories) to compare.
    pub without: PathBuf,
    pub with: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decimals: Option<usize>,

    /// Directory holding `costs.csv` and `sizes.csv` for `mrt-solve`.
    pub world: PathBuf,
    pub domestic: DomesticTrade,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let v = ValidationConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            out: "out".into(),
            threads: 0,
            data: "data".into(),
            log_levels: false,
            countries: g.countries,
            years: g.years,
            first_year: g.first_year,
            sigma: g.sigma,
            rho: g.rho,
            noise_sd: g.noise_sd,
            tv_cost_sd: g.tv_cost_sd,
            size_shock_sd: g.size_shock_sd,
            distance_share: g.distance_share,
            with_dist: false,
            sar: false,
            normalization: Normalization::RowStochastic,
            lag_mode: LagMode::Origin,
            instrument_order: 1,
            replications: v.replications,
            alpha: v.alpha,
            mrt_mode: v.mrt_mode,
            distance_loading: LoadingPolicy::Unit,
            reference: v.reference,
            rescale_residuals: v.rescale_residuals,
            max_failure_share: v.max_failure_share,
            save_draws: false,
            without: "without/coefficients.csv".into(),
            with: "with/coefficients.csv".into(),
            decimals: None,
            world: "world".into(),
            domestic: DomesticTrade::Excluded,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!("config version {} (expected {CONFIG_VERSION})", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            countries: self.countries,
            years: self.years,
            first_year: self.first_year,
            sigma: self.sigma,
            rho: self.rho,
            noise_sd: self.noise_sd,
            seed: self.seed,
            distance_share: self.distance_share,
            tv_cost_sd: self.tv_cost_sd,
            size_shock_sd: self.size_shock_sd,
            mrt_mode: self.mrt_mode,
            domestic: self.domestic,
            weights: self.weight_spec(),
            ..GeneratorConfig::default()
        }
    }

    pub fn weight_spec(&self) -> WeightSpec {
        WeightSpec { normalization: self.normalization, mode: self.lag_mode }
    }

    pub fn validation(&self, distance: DistanceLoading) -> ValidationConfig {
        ValidationConfig {
            sigma: self.sigma,
            distance,
            mrt_mode: self.mrt_mode,
            domestic: self.domestic,
            replications: self.replications,
            seed: self.seed,
            alpha: self.alpha,
            rescale_residuals: self.rescale_residuals,
            max_failure_share: self.max_failure_share,
            reference: self.reference,
            ..ValidationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig { seed: 99, rho: 0.3, sar: true, decimals: Some(3), ..RunConfig::default() };
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        cfg.decimals = None;
        cfg.mrt_mode = MrtMode::PerYear;
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 5\nnormalization = \"spectral\"\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.normalization, Normalization::Spectral);
        assert_eq!(cfg.replications, 399);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("sed = 5\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::from_toml_str("version = 2\n"), Err(Error::InvalidConfig(_))));
    }
}
