use thiserror::Error;

use crate::panel::Quarter;

#[derive(Debug, Error)]
pub enum FavarError {
    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate series id `{0}`")]
    DuplicateId(String),

    #[error("series `{id}`: transform code {code} is outside 1-7")]
    InvalidTransformCode { id: String, code: i64 },

    #[error("invalid date `{value}` at line {line}: {reason}")]
    InvalidDate { value: String, line: usize, reason: String },

    #[error("series `{id}`: nonpositive value {value} under log transform code {code}")]
    NonPositiveLog { id: String, code: u8, value: f64 },

    #[error("series `{id}` has {len} observations, too short for transform code {code}")]
    SeriesTooShort { id: String, code: u8, len: usize },

    #[error("series `{0}` has zero variance and cannot be standardized")]
    ZeroVariance(String),

    #[error("panel is empty after balancing")]
    EmptyPanel,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient regressor matrix in {context} (rank {rank} of {cols})")]
    RankDeficient { context: String, rank: usize, cols: usize },

    #[error("numerically singular covariance: {0}")]
    Singular(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("optimizer failed after {iterations} iterations (last gradient norm {gradient_norm:e})")]
    OptimizerFailure { iterations: usize, gradient_norm: f64 },

    #[error("negative LR statistic {0}; unconstrained and constrained log likelihoods look swapped")]
    NegativeLrStatistic(f64),

    #[error("non-finite value in input at position {0}")]
    NonFinite(usize),

    #[error("narrative event `{label}` dated {quarter} lies outside the date grid")]
    EventOutsideGrid { label: String, quarter: Quarter },

    #[error("narrative event `{label}` has nonpositive tax base {base}")]
    NonPositiveBase { label: String, base: f64 },

    #[error("insufficient observations: {0}")]
    InsufficientObservations(String),

    #[error("identification failed: {accepted} of {attempts} draws accepted (acceptance rate {rate:.6})")]
    IdentificationFailed {
        attempts: usize,
        accepted: usize,
        rate: f64,
    },

    #[error("zero scale for variable index {0}")]
    ZeroScale(usize),

    #[error("zero total forecast error variance for variable index {0}")]
    ZeroForecastVariance(usize),

    #[error("bootstrap identification failed in {failed} of {replications} replications (limit {limit:.3})")]
    BootstrapFailure {
        failed: usize,
        replications: usize,
        limit: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FavarError>;
