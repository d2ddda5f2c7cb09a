use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value during {stage} in layer {index} ({layer})")]
    NonFinite {
        stage: &'static str,
        index: usize,
        layer: String,
    },
    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },
    #[error("malformed network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(context: &'static str, expected: &[usize], actual: &[usize]) -> NnError {
    NnError::Shape {
        context,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
