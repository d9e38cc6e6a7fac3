use thiserror::Error;

/// Errors produced anywhere in the training and reporting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or dimensions do not line up (layer chain, feature width, parameter length).
    #[error("structural error: {0}")]
    Structural(String),

    /// A non-finite value appeared in the forward or backward pass.
    #[error("non-finite value in layer {layer}: {detail}")]
    Numerical { layer: usize, detail: String },

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    /// Aggregation was attempted without a complete set of agent reports.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Target privacy level cannot be met inside the supported noise range.
    #[error("target epsilon {target} unreachable for sigma in [{lo}, {hi}]")]
    SigmaOutOfRange { target: f64, lo: f64, hi: f64 },

    /// Training diverged (NaN/inf loss).
    #[error("training aborted: {0}")]
    Aborted(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
