//! Error type shared across the pipeline.

use std::path::Path;

/// Everything that can go wrong between a wav file and an aggregate report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported wav format in {path}: {detail}")]
    UnsupportedFormat { path: String, detail: String },

    #[error("corrupt wav header in {path}: {detail}")]
    CorruptHeader { path: String, detail: String },

    #[error("audio stream contains no samples")]
    EmptyAudio,

    #[error("clip too short to frame: {got} samples, one window needs {needed}")]
    TooShort { needed: usize, got: usize },

    #[error("unsupported sample rate {0} Hz (expected 8000 or 16000)")]
    UnsupportedRate(u32),

    #[error("mask holds {got} frames, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("parse error in {path} line {line}: {detail}")]
    ParseError {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("mask is empty")]
    EmptyMask,

    #[error("bad magic in {0}, not a feature file")]
    BadMagic(String),

    #[error("unsupported file version {0}")]
    VersionUnsupported(u32),

    #[error("truncated payload in {path}: {detail}")]
    TruncatedPayload { path: String, detail: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("matrix has no rows")]
    EmptyMatrix,

    #[error("vad timeline ends {gap_ms} ms before the feature timeline")]
    TimelineMismatch { gap_ms: u64 },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("class weights must be positive, got {0}")]
    NonPositiveWeight(f64),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("confusion matrix row {0} has no observations")]
    EmptyRow(usize),

    #[error("need at least 2 fold values, got {0}")]
    TooFewFolds(usize),

    #[error("unknown emotion label '{0}'")]
    UnknownLabel(String),

    #[error("manifest is missing column '{0}'")]
    MissingColumn(String),

    #[error("speaker-exclusive folds need at least 3 speakers, got {0}")]
    SingleSpeaker(usize),

    #[error("invalid corpus spec: {0}")]
    BadSpec(String),

    #[error("loss diverged to a non-finite value at epoch {0}")]
    DivergedLoss(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an io error with the path it happened on.
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
