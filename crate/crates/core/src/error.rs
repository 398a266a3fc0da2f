use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A malformed input file; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("column '{0}' has no observed values")]
    AllMissing(String),

    #[error("empty {0}")]
    EmptyPartition(&'static str),

    #[error("rank deficient design: columns {0:?} are linearly dependent on earlier columns")]
    RankDeficient(Vec<String>),

    #[error("separation: overlap scores degenerate ({0})")]
    Separation(String),

    #[error("non-finite likelihood: {0}")]
    NonFinite(String),

    #[error("degenerate spread: {0}")]
    DegenerateSpread(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
