use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: field `{field}` out of range: {message}")]
    Range {
        line: u64,
        field: &'static str,
        message: String,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedCodec(String),

    #[error("corrupt audio header: {0}")]
    CorruptHeader(String),

    #[error("resampling failed: {0}")]
    Resample(String),

    #[error("invalid signal: {0}")]
    Signal(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss in batch {batch} (recordings: {recordings})")]
    NonFiniteLoss { batch: usize, recordings: String },

    #[error("invalid segmentation cache: {0}")]
    Cache(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
