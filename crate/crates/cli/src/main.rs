//! Command-line pipeline: generate, weights, estimate, compare, validate and
//! mrt-solve over CSV panels.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::{DeserializeOwned, IntoDeserializer};
use spgravity::Error;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "spgravity", version, about = "Spatial structural gravity: estimation and pair-effect validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic panel from the structural model.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        world: WorldFlags,
    },
    /// Inverse-distance weights of a dataset.
    Weights {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Fit the gravity model with or without distance.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Side-by-side coefficient table of two fits.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Coefficient CSV (or estimate output directory) of the model without distance.
        #[arg(long)]
        without: Option<PathBuf>,
        /// Coefficient CSV (or estimate output directory) of the model with distance.
        #[arg(long)]
        with: Option<PathBuf>,
        /// Re-print numeric cells with this many decimals.
        #[arg(long)]
        decimals: Option<usize>,
    },
    /// Variance decomposition and bootstrap t-test of the pair effects.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        validation: ValidationFlags,
    },
    /// Solve the resistance terms of one world.
    MrtSolve {
        #[command(flatten)]
        common: Common,
        /// Directory with `costs.csv` (origin,dest,cost) and `sizes.csv` (country,output,expenditure).
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        /// excluded or frictionless
        #[arg(long, value_parser = parse_enum::<spgravity::structural::DomesticTrade>)]
        domestic: Option<spgravity::structural::DomesticTrade>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML file with any run parameter; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct WorldFlags {
    #[arg(long = "n")]
    countries: Option<usize>,
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    first_year: Option<i32>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Standard deviation of the omitted time-varying log trade cost.
    #[arg(long)]
    tv_cost_sd: Option<f64>,
    #[arg(long)]
    size_shock_sd: Option<f64>,
    #[arg(long)]
    distance_share: Option<f64>,
}

#[derive(Debug, Args)]
struct DataFlags {
    /// Directory with `panel.csv`, `schema.toml` and optionally `distances.csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Flows and size covariates are in levels.
    #[arg(long)]
    log_levels: bool,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long, overrides_with = "no_dist")]
    with_dist: bool,
    #[arg(long, overrides_with = "with_dist")]
    no_dist: bool,
    /// Spatial-lag model fitted by IV/GMM.
    #[arg(long)]
    sar: bool,
    /// none, row_stochastic or spectral
    #[arg(long, value_parser = parse_enum::<spgravity::spatial::Normalization>)]
    normalization: Option<spgravity::spatial::Normalization>,
    /// origin or destination
    #[arg(long, value_parser = parse_enum::<spgravity::spatial::LagMode>)]
    lag_mode: Option<spgravity::spatial::LagMode>,
    #[arg(long)]
    instrument_order: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidationFlags {
    /// Bootstrap replications.
    #[arg(long = "B", alias = "replications")]
    replications: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// pooled or per_year
    #[arg(long, value_parser = parse_enum::<spgravity::structural::MrtMode>)]
    mrt_mode: Option<spgravity::structural::MrtMode>,
    /// unit or estimated
    #[arg(long, value_parser = parse_enum::<config::LoadingPolicy>)]
    distance_loading: Option<config::LoadingPolicy>,
    /// percentile or student_t
    #[arg(long, value_parser = parse_enum::<spgravity::inference::Reference>)]
    reference: Option<spgravity::inference::Reference>,
    /// Resample raw rather than dof-rescaled residuals.
    #[arg(long)]
    no_rescale: bool,
    #[arg(long)]
    max_failure_share: Option<f64>,
    /// Also write the per-replication draws.
    #[arg(long)]
    save_draws: bool,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(IntoDeserializer::<serde::de::value::Error>::into_deserializer(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out, self.out.clone());
        set(&mut cfg.threads, self.threads);
        Ok(cfg)
    }
}

impl WorldFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.countries, self.countries);
        set(&mut cfg.years, self.years);
        set(&mut cfg.first_year, self.first_year);
        set(&mut cfg.sigma, self.sigma);
        set(&mut cfg.rho, self.rho);
        set(&mut cfg.noise_sd, self.noise_sd);
        set(&mut cfg.tv_cost_sd, self.tv_cost_sd);
        set(&mut cfg.size_shock_sd, self.size_shock_sd);
        set(&mut cfg.distance_share, self.distance_share);
    }
}

impl DataFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.data, self.data.clone());
        cfg.log_levels |= self.log_levels;
    }
}

impl ModelFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.with_dist {
            cfg.with_dist = true;
        }
        if self.no_dist {
            cfg.with_dist = false;
        }
        cfg.sar |= self.sar;
        set(&mut cfg.normalization, self.normalization);
        set(&mut cfg.lag_mode, self.lag_mode);
        set(&mut cfg.instrument_order, self.instrument_order);
    }
}

impl ValidationFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.replications, self.replications);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.sigma, self.sigma);
        set(&mut cfg.mrt_mode, self.mrt_mode);
        set(&mut cfg.distance_loading, self.distance_loading);
        set(&mut cfg.reference, self.reference);
        set(&mut cfg.max_failure_share, self.max_failure_share);
        if self.no_rescale {
            cfg.rescale_residuals = false;
        }
        cfg.save_draws |= self.save_draws;
    }
}

/// Exit status: 2 for configuration errors, 4 for failures of the validation
/// procedure, 3 for everything else.
fn exit_code(command: &Command, err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidB(..) | Error::InvalidSpec(_) => 2,
        Error::BootstrapFailure { .. } => 4,
        Error::NonConvergence { .. } | Error::DegenerateVariance(_) | Error::NonFiniteComponent(_) | Error::StaleSolution(_)
            if matches!(command, Command::Validate { .. }) =>
        {
            4
        }
        _ => 3,
    }
}

fn resolve(command: &Command) -> Result<RunConfig, Error> {
    let cfg = match command {
        Command::Generate { common, world } => {
            let mut cfg = common.resolve()?;
            world.apply(&mut cfg);
            cfg
        }
        Command::Weights { common, data, model } | Command::Estimate { common, data, model } => {
            let mut cfg = common.resolve()?;
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            cfg
        }
        Command::Compare { common, without, with, decimals } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.without, without.clone());
            set(&mut cfg.with, with.clone());
            if decimals.is_some() {
                cfg.decimals = *decimals;
            }
            cfg
        }
        Command::Validate { common, data, model, validation } => {
            let mut cfg = common.resolve()?;
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            validation.apply(&mut cfg);
            cfg
        }
        Command::MrtSolve { common, world, sigma, domestic } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.world, world.clone());
            set(&mut cfg.sigma, *sigma);
            set(&mut cfg.domestic, *domestic);
            cfg
        }
    };
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<(), Error> {
    let cfg = resolve(command)?;
    match command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Weights { .. } => commands::weights(&cfg),
        Command::Estimate { .. } => commands::estimate(&cfg),
        Command::Compare { .. } => commands::compare(&cfg),
        Command::Validate { .. } => commands::validate(&cfg),
        Command::MrtSolve { .. } => commands::mrt_solve(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err}", err.name());
            ExitCode::from(exit_code(&cli.command, &err))
        }
    }
}
