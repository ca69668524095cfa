use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between reading a CSV and writing a report.
///
/// The variants are grouped so the CLI can map them onto its exit codes:
/// usage problems, data problems and numeric divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("malformed json in {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("header does not match schema: {0}")]
    HeaderMismatch(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{0}: no data rows")]
    EmptyTable(PathBuf),

    #[error("column `{0}` has no observed values to impute from")]
    AllMissing(String),

    #[error("column `{column}`: category `{value}` is not known to the preprocessor")]
    UnknownCategory { column: String, value: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Divergence,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => ErrorKind::Divergence,
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
