use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("unparsable numeric at row {row}, column {column}: {value:?}")]
    UnparsableNumeric { row: usize, column: String, value: String },

    #[error("role conflict: column {column} assigned to both {first} and {second}")]
    RoleConflict { column: String, first: &'static str, second: &'static str },

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid fold count K={k} for N={n}")]
    InvalidFolds { k: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("degenerate V distribution")]
    DegenerateDistribution,

    #[error("irrelevant instrument (zero first-stage covariance)")]
    IrrelevantInstrument,

    #[error("locally irrelevant instrument at v = {0}")]
    LocallyIrrelevantInstrument(f64),

    #[error("not estimable at v = {0}")]
    NotEstimable(f64),

    #[error("linear IV mode requires a single instrument, got {0}")]
    LinearIvNeedsUnivariateZ(usize),

    #[error("fold {fold} too small to train a learner ({size} training rows)")]
    FoldTooSmall { fold: usize, size: usize },

    #[error("curves sampled on mismatched grids")]
    GridMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::MissingColumn(_) => "missing_column",
            Error::UnparsableNumeric { .. } => "unparsable_numeric",
            Error::RoleConflict { .. } => "role_conflict",
            Error::TooFewObservations { .. } => "too_few_observations",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidFolds { .. } => "invalid_folds",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidProbability(_) => "invalid_probability",
            Error::DegenerateDistribution => "degenerate_distribution",
            Error::IrrelevantInstrument => "irrelevant_instrument",
            Error::LocallyIrrelevantInstrument(_) => "locally_irrelevant_instrument",
            Error::NotEstimable(_) => "not_estimable",
            Error::LinearIvNeedsUnivariateZ(_) => "linear_iv_needs_univariate_z",
            Error::FoldTooSmall { .. } => "fold_too_small",
            Error::GridMismatch => "grid_mismatch",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
        }
    }
}
