use crate::fit::FitResult;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("truncation cap {cap} reached before the pmf tail dropped below {tail_mass:e} (mean {lambda})")]
    Truncation { lambda: f64, cap: u64, tail_mass: f64 },

    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),

    #[error("invalid model setup: {0}")]
    InvalidSpec(String),

    #[error("optimizer did not converge after {} iterations (projected gradient {:e})", .0.iterations, .0.grad_norm)]
    NonConvergence(Box<FitResult>),

    #[error("information matrix is singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },

    #[error("knot grid is empty: max(y) = {max_y}")]
    GridEmpty { max_y: u64 },

    #[error("tuning failed: {0}")]
    Tune(String),

    #[error("conditional mean exploded at t = {t} (lambda = {lambda:e})")]
    Explosion { t: usize, lambda: f64 },

    #[error("{failures} of {reps} replications failed for alpha = {alpha}")]
    ScenarioUnstable { alpha: f64, failures: usize, reps: usize },

    #[error("degenerate sample: n = {n} must exceed d = {d}")]
    DegenerateSample { n: usize, d: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("negative count at line {line}")]
    NegativeCount { line: u64 },

    #[error("non-finite covariate at line {line}")]
    NonFiniteCovariate { line: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable structured name, printed by the CLI and exposed over FFI.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Truncation { .. } => "TruncationError",
            Error::InfeasibleParams(_) => "InfeasibleParams",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::NonConvergence(_) => "NonConvergence",
            Error::SingularInformation { .. } => "SingularInformation",
            Error::GridEmpty { .. } => "GridEmpty",
            Error::Tune(_) => "TuneError",
            Error::Explosion { .. } => "ExplosionError",
            Error::ScenarioUnstable { .. } => "ScenarioUnstable",
            Error::DegenerateSample { .. } => "DegenerateSample",
            Error::Parse { .. } => "ParseError",
            Error::NegativeCount { .. } => "NegativeCount",
            Error::NonFiniteCovariate { .. } => "NonFiniteCovariate",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
