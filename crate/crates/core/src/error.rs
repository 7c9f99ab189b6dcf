use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {what} ({expected} vs {found})")]
    ShapeMismatch { what: &'static str, expected: String, found: String },

    #[error("value out of range: {0}")]
    RangeViolation(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("patch size {patch} exceeds image dimensions {height}x{width}")]
    PatchTooLarge { patch: usize, height: usize, width: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("bad input dimensions: {0}")]
    BadInputDims(String),

    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("classifier mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json failure on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("training interrupted at epoch {epoch}, step {step}")]
    Interrupted { epoch: usize, step: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch { what, expected: format!("{expected:?}"), found: format!("{found:?}") }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
