use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value in {layer}")]
    Numeric { layer: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported bit depth: {0}")]
    UnsupportedDepth(String),

    #[error("sr plugin `{plugin}` failed: {message}")]
    Plugin { plugin: String, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("labeling error: {0}")]
    Label(String),

    #[error("rating protocol error: {0}")]
    Protocol(String),

    #[error("dataset error in record `{record}`: {message}")]
    Record { record: String, message: String },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("weight file error: {0}")]
    WeightFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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
