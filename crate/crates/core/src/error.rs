use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("missing quarter {quarter} in series for '{drug}'")]
    Gap { drug: String, quarter: String },

    #[error("insufficient data: series has {len} quarters, need at least {min}")]
    InsufficientData { len: usize, min: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("benchmark error: {0}")]
    Benchmark(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
