use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: header declares {declared} channels but the file holds {found} data streams")]
    ChannelMismatch {
        path: PathBuf,
        declared: usize,
        found: usize,
    },
    #[error("{path}: expected {expected} sample bytes, found {found}")]
    SampleCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample {value} at channel {channel}, index {index} does not fit in 16 bits after calibration")]
    Range {
        channel: usize,
        index: usize,
        value: f64,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid annotations: {0}")]
    InvalidAnnotations(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Data(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("shape chain broken at stage `{stage}`: {detail}")]
    ShapeChain { stage: String, detail: String },
    #[error(transparent)]
    Nn(#[from] eegdet_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl CoreError {
    pub fn class(&self) -> ErrorClass {
        use eegdet_nn::NnError;
        match self {
            CoreError::Config(_) | CoreError::ShapeChain { .. } => ErrorClass::Config,
            CoreError::Numeric(_) => ErrorClass::Numeric,
            CoreError::Nn(NnError::NonFinite { .. }) => ErrorClass::Numeric,
            CoreError::Nn(NnError::Config(_) | NnError::Unknown { .. }) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
