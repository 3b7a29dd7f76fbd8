use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("length mismatch at line {line}: {tokens} tokens vs {tags} tags")]
    LengthMismatch {
        line: usize,
        tokens: usize,
        tags: usize,
    },

    #[error("unknown POS tag {tag:?} at line {line}")]
    UnknownPosTag { line: usize, tag: String },

    #[error("unknown label {label:?} at line {line}")]
    UnknownLabel { line: usize, label: String },

    #[error("insufficient data in cell {cell}")]
    InsufficientData { cell: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("tape already consumed by a previous backward pass")]
    StaleTape,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("kernel matrix is not symmetric (max deviation {0:e})")]
    AsymmetricKernel(f64),

    #[error("training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("pipeline mismatch: {0}")]
    PipelineMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::UnknownPosTag { .. } => "unknown-pos-tag",
            Error::UnknownLabel { .. } => "unknown-label",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::EmptyInput(_) => "empty-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Shape { .. } => "shape",
            Error::NonScalarLoss { .. } => "non-scalar-loss",
            Error::StaleTape => "stale-tape",
            Error::SingleClass => "single-class",
            Error::AsymmetricKernel(_) => "asymmetric-kernel",
            Error::Divergence { .. } => "divergence",
            Error::PipelineMismatch(_) => "pipeline-mismatch",
            Error::Format(_) => "format",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
