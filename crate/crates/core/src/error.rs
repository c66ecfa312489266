use thiserror::Error;

/// Errors raised by the interval kernels, calibration and I/O layers.
#[derive(Debug, Error)]
pub enum ChrError {
    #[error("infeasible interval problem: {0}")]
    Infeasible(String),

    #[error("histogram masses sum to {sum}, expected 1")]
    NonUnitSum { sum: f64 },

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("empty interval has no response range")]
    EmptyInterval,

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("fold {fold} has {size} samples, need at least 2")]
    FoldTooSmall { fold: usize, size: usize },

    #[error("need at least {needed} test points, got {got}")]
    TooFewTestPoints { needed: usize, got: usize },

    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("oracle quantiles are unavailable for this data source")]
    UnsupportedGenerator,

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("file has no data rows")]
    EmptyFile,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ChrError>;
