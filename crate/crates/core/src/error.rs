use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("file contains no data rows")]
    EmptyFile,

    #[error("non-positive price {value} on {date}")]
    NonPositivePrice { date: NaiveDate, value: f64 },

    #[error("series share no common dates")]
    EmptyIntersection,

    #[error("series kind mismatch for '{ticker}': expected {expected}")]
    WrongKind { ticker: String, expected: &'static str },

    #[error("non-finite likelihood at observation {index}")]
    NonFiniteLikelihood { index: usize },

    #[error("optimizer hit {iterations} iterations with gradient norm {grad_norm:.3e}")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("particle degeneracy at observation {index} (ess = {ess:.3})")]
    ParticleDegeneracy { index: usize, ess: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("sample too small: need at least {needed}, got {found}")]
    SampleTooSmall { needed: usize, found: usize },

    #[error("fits are not on the same series: {0}")]
    SeriesMismatch(String),

    #[error("regressor is constant; cannot orthogonalize")]
    DegenerateRegressor,

    #[error("dates do not line up: {0}")]
    DateMismatch(String),

    #[error("design matrix is rank deficient at column '{column}'")]
    RankDeficient { column: String },

    #[error("crisis window '{label}' contains no observations")]
    EmptyWindow { label: String },

    #[error("grid filter leaked {mass:.3e} probability mass at observation {index}")]
    MassLeak { index: usize, mass: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("grid point {index} (sigma0={sigma0}, phi={phi}, tau2={tau2}): {source}")]
    GridPoint {
        index: usize,
        sigma0: f64,
        phi: f64,
        tau2: f64,
        source: Box<Error>,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad
    /// inputs or configuration. The CLI maps these to a distinct exit code.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteLikelihood { .. }
            | Error::NonConvergence { .. }
            | Error::ParticleDegeneracy { .. }
            | Error::DegenerateRegressor
            | Error::RankDeficient { .. }
            | Error::MassLeak { .. } => true,
            Error::GridPoint { source, .. } | Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
