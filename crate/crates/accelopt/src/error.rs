use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design space: {0}")]
    InvalidSpace(String),

    #[error("parameter `{param}`: index {index} out of range (cardinality {cardinality})")]
    IndexOutOfRange {
        param: String,
        index: usize,
        cardinality: usize,
    },

    #[error("config has {got} indices, design space has {expected} parameters")]
    ConfigLength { expected: usize, got: usize },

    #[error("one-hot block {block} is malformed: {reason}")]
    MalformedOneHot { block: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unknown application id `{0}`")]
    UnknownApp(String),

    #[error("objective returned a non-finite value for a particle")]
    NonFiniteObjective,

    #[error("non-finite loss at gradient step {step} (batch hash {batch_hash:#018x})")]
    NonFiniteLoss { step: u64, batch_hash: u64 },

    #[error("checkpoint does not match design space: {0}")]
    CheckpointMismatch(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("internal shape mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
