use thiserror::Error;

/// Problems with input records or files. Reported before any estimation runs.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("duplicate subject id '{id}' (rows {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },

    #[error("row {row}: arm must be 0 or 1, found {value}")]
    InvalidArm { row: usize, value: String },

    #[error("row {row}: column '{column}' must be 0 or 1, found {value}")]
    InvalidIndicator {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: u2 exceeds u1 ({u2} > {u1})")]
    U2ExceedsU1 { row: usize, u1: f64, u2: f64 },

    #[error("row {row}: nonfatal event at u2={u2} must occur strictly before u1={u1}")]
    NonfatalNotBeforeFatal { row: usize, u1: f64, u2: f64 },

    #[error("row {row}: time '{column}' is negative or not finite ({value})")]
    InvalidTime {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("row {row}: expected {expected} covariates, found {found}")]
    RaggedCovariates {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: covariate '{column}' is not finite")]
    NonFiniteCovariate { row: usize, column: String },

    #[error("{} arm {}", .arm, arm_size_message(*.count))]
    ArmTooSmall { arm: &'static str, count: usize },

    #[error("expected {expected} covariate names, got {found}")]
    CovariateNames { expected: usize, found: usize },

    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column '{column}': missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column '{column}': unknown category '{value}'")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    #[error("categorical column '{0}' has a single level")]
    SingleLevel(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn arm_size_message(count: usize) -> String {
    match count {
        0 => "empty".to_string(),
        c => format!("has {c} subject(s); at least 2 are required"),
    }
}

/// Failures of the probabilistic index model solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("singular normal equations: collinear design columns {}", .columns.join(", "))]
    Singular { columns: Vec<String> },

    #[error("separation detected after {iterations} iterations: coefficient norm {norm:.3} exceeds {limit}")]
    Separation {
        iterations: usize,
        norm: f64,
        limit: f64,
    },

    #[error("no convergence after {iterations} iterations (score norm {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },

    #[error("covariate vector length {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Inference cannot be formed from an estimate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("estimate {0} lies on the boundary of (0, 1); odds are undefined")]
    BoundaryEstimate(f64),

    #[error("variance estimate is zero or invalid ({0})")]
    DegenerateVariance(f64),

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),

    #[error("{failures} of {reps} replicates failed for adjustment size {adjustment_size} (limit 1%)")]
    TooManyFailures {
        adjustment_size: usize,
        failures: usize,
        reps: usize,
    },

    #[error("empirical quantile of an empty sample")]
    EmptySample,

    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
