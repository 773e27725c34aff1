use thiserror::Error;

/// Errors raised across the crate. Variant names are part of the CLI
/// contract: they are printed verbatim on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unbalanced panel: {} missing (origin, dest, year) cells, first: {}", .missing.len(), fmt_cells(.missing))]
    UnbalancedPanel { missing: Vec<(String, String, i32)> },
    #[error("non-positive distance between `{0}` and `{1}`")]
    NonPositiveDistance(String, String),
    #[error("duplicate observation ({0}, {1}, {2})")]
    DuplicateObservation(String, String, i32),
    #[error("covariate `{name}` violates its declared role `{role}`")]
    RoleViolation { name: String, role: String },
    #[error("invalid value in `{column}`: {reason}")]
    InvalidValue { column: String, reason: String },
    #[error("unknown regressor `{0}`")]
    UnknownRegressor(String),
    #[error("regressors {0:?} are constant within pairs and collinear with pair fixed effects")]
    CollinearDummySpec(Vec<String>),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("zero distance between distinct units {0} and {1}")]
    ZeroDistance(usize, usize),
    #[error("distance matrix is not symmetric with zero diagonal")]
    AsymmetricInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable has zero variance")]
    ZeroVariance,

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e}){}", .context.as_deref().map(|c| format!(" [{c}]")).unwrap_or_default())]
    NonConvergence { iterations: usize, residual: f64, context: Option<String> },
    #[error("invalid structural world: {0}")]
    InvalidWorld(String),
    #[error("multilateral resistance solution is stale for this world (residual {0:e})")]
    StaleSolution(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design is rank deficient in columns {0:?}")]
    RankDeficient(Vec<String>),
    #[error("weak instruments: first-stage F = {0:.3} below 10")]
    WeakInstruments(f64),
    #[error("specifications are not comparable: {0}")]
    IncomparableSpecs(String),

    #[error("missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("specification mismatch: {0}")]
    SpecMismatch(String),
    #[error("non-finite structural component `{0}`")]
    NonFiniteComponent(String),
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("invalid bootstrap replication count {0} (minimum {1})")]
    InvalidB(usize, usize),
    #[error("bootstrap aborted: {failed} of {total} replications failed to converge")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

fn fmt_cells(cells: &[(String, String, i32)]) -> String {
    cells
        .first()
        .map(|(o, d, t)| format!("({o}, {d}, {t})"))
        .unwrap_or_default()
}

impl Error {
    /// Variant name as printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::NonPositiveDistance(..) => "NonPositiveDistance",
            Error::DuplicateObservation(..) => "DuplicateObservation",
            Error::RoleViolation { .. } => "RoleViolation",
            Error::InvalidValue { .. } => "InvalidValue",
            Error::UnknownRegressor(_) => "UnknownRegressor",
            Error::CollinearDummySpec(_) => "CollinearDummySpec",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::ZeroDistance(..) => "ZeroDistance",
            Error::AsymmetricInput => "AsymmetricInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroVariance => "ZeroVariance",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::InvalidWorld(_) => "InvalidWorld",
            Error::StaleSolution(_) => "StaleSolution",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::RankDeficient(_) => "RankDeficient",
            Error::WeakInstruments(_) => "WeakInstruments",
            Error::IncomparableSpecs(_) => "IncomparableSpecs",
            Error::MissingCovariate(_) => "MissingCovariate",
            Error::SpecMismatch(_) => "SpecMismatch",
            Error::NonFiniteComponent(_) => "NonFiniteComponent",
            Error::IndexMismatch(_) => "IndexMismatch",
            Error::DegenerateVariance(_) => "DegenerateVariance",
            Error::InvalidB(..) => "InvalidB",
            Error::BootstrapFailure { .. } => "BootstrapFailure",
            Error::MissingFile(_) => "MissingFile",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Parse(_) => "Parse",
        }
    }

    pub(crate) fn non_convergence(iterations: usize, residual: f64) -> Self {
        Error::NonConvergence { iterations, residual, context: None }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
