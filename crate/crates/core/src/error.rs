use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the annotation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),
    #[error("image is {width}x{height}, both sides must be at least {min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("region {0} does not exist")]
    InvalidRegion(u32),
    #[error("mask is empty")]
    EmptyMask,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, got {actual}")]
    InconsistentDims {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("bad magic bytes in feature file")]
    BadMagic,
    #[error("feature file truncated: {0}")]
    TruncatedFile(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("tag list is empty")]
    EmptyTagList,
    #[error("no feature for image {0}")]
    MissingFeatures(String),
    #[error("no mask for image {0}")]
    MissingMask(String),
    #[error("dictionary would have no atoms")]
    EmptyDictionary,
    #[error("no sparse codes to compare")]
    NoCodesPresent,
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("region {0} is not active")]
    InactiveRegion(u32),
    #[error("region {0} cannot be divided")]
    AlreadyDivided(u32),
    #[error("session is sealed")]
    SessionSealed,
    #[error("set has {got} images, at least {needed} required")]
    TooFewImages { needed: usize, got: usize },
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
