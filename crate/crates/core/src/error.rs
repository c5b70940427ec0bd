use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum DimoError {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: need at least {needed} vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt token grid: {0}")]
    CorruptGrid(String),

    #[error("vocabulary error: unknown word {0:?}")]
    Vocabulary(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined loss: no masked positions")]
    UndefinedLoss,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("corrupt input: {0}")]
    CorruptInput(String),

    #[error("no-op: {0}")]
    NoOp(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DimoError>;
