//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at row {row}, col {col}")]
    NonFiniteValue {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("saliency out of range at index {index}: {value}")]
    SaliencyOutOfRange { index: usize, value: f32 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("budget {budget} exceeds candidate set of {available}")]
    BudgetExceedsSet { budget: usize, available: usize },

    #[error("static set is empty but {requested} merged tokens were requested")]
    EmptyStaticSet { requested: usize },

    #[error("non-finite input to quantizer at head {head}, token {token}, channel {channel}")]
    NonFiniteInput {
        head: usize,
        token: usize,
        channel: usize,
    },

    #[error("packed code buffer has {got} bytes, expected {expected}")]
    CorruptPackedLength { expected: usize, got: usize },

    #[error("memory store is empty")]
    EmptyStore,

    #[error("group index {index} out of range for store of {len} groups")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("malformed {format} field '{field}': {detail}")]
    Format {
        format: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
