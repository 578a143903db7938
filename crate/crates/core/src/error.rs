use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the shared data model and storage formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("matrix data length {len} does not match {rows} x {dim}")]
    Shape { rows: usize, dim: usize, len: usize },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("row index {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("manifest schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed manifest line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("manifest header declares {declared} records but {found} were read")]
    CountMismatch { declared: usize, found: usize },
    #[error("duplicate record id {0:#018x}")]
    DuplicateId(u64),
    #[error("record {0:#018x} has empty text")]
    EmptyText(u64),
    #[error("stage cannot move backwards from {from:?} to {to:?}")]
    StageRegression {
        from: crate::record::Stage,
        to: crate::record::Stage,
    },

    #[error("bad embedding sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
