use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps to a stable numeric [`ErrorCode`], which is what the CLI
/// and the C interface report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: header implies {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("patch size {patch} does not divide volume size {size} on axis {axis}")]
    Tiling {
        axis: char,
        size: usize,
        patch: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("misaligned inputs: {0}")]
    Alignment(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("incomplete run grid: {0}")]
    IncompleteGrid(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("volume too large for oracle: {voxels} voxels (limit {limit})")]
    TooLarge { voxels: usize, limit: usize },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Stable numeric codes, shared by the CLI diagnostics and the C interface.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Ok = 0,
    MissingFile = 1,
    MalformedHeader = 2,
    SizeMismatch = 3,
    NonFinite = 4,
    Parameter = 5,
    Tiling = 6,
    Shape = 7,
    Data = 8,
    Range = 9,
    Degenerate = 10,
    Alignment = 11,
    MetricUndefined = 12,
    IncompleteGrid = 13,
    Stratification = 14,
    Placement = 15,
    TooLarge = 16,
    Config = 17,
    Parse = 18,
    Io = 19,
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::MissingFile(_) => ErrorCode::MissingFile,
            Error::MalformedHeader(_) => ErrorCode::MalformedHeader,
            Error::SizeMismatch { .. } => ErrorCode::SizeMismatch,
            Error::NonFinite { .. } => ErrorCode::NonFinite,
            Error::Parameter(_) => ErrorCode::Parameter,
            Error::Tiling { .. } => ErrorCode::Tiling,
            Error::Shape { .. } => ErrorCode::Shape,
            Error::Data(_) => ErrorCode::Data,
            Error::Range { .. } => ErrorCode::Range,
            Error::Degenerate(_) => ErrorCode::Degenerate,
            Error::Alignment(_) => ErrorCode::Alignment,
            Error::MetricUndefined(_) => ErrorCode::MetricUndefined,
            Error::IncompleteGrid(_) => ErrorCode::IncompleteGrid,
            Error::Stratification(_) => ErrorCode::Stratification,
            Error::Placement(_) => ErrorCode::Placement,
            Error::TooLarge { .. } => ErrorCode::TooLarge,
            Error::Config { .. } => ErrorCode::Config,
            Error::Parse(_) | Error::Json(_) => ErrorCode::Parse,
            Error::Io(_) => ErrorCode::Io,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
