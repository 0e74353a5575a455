use thiserror::Error;

/// Errors raised across the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("duplicate doc_id `{0}`")]
    DuplicateDocument(String),

    #[error("sentence index {index} out of bounds for document `{doc_id}` with {count} sentences")]
    SentenceOutOfBounds { doc_id: String, index: usize, count: usize },

    #[error("unknown doc_id `{0}`")]
    UnknownDocument(String),

    #[error("empty n-gram profile for question and candidate")]
    EmptyProfile,

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("nothing to pool: text has no tokens")]
    EmptyText,

    #[error("question and candidate need {needed} positions, max_len is {max_len}")]
    SequenceTooLong { needed: usize, max_len: usize },

    #[error("token id {id} >= vocab_size {vocab_size}")]
    TokenOutOfVocab { id: u32, vocab_size: usize },

    #[error("invalid config `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("missing {0} span")]
    MissingSpan(&'static str),

    #[error("dataset has a single class")]
    SingleClass,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Empty(&'static str),

    #[error("no answerable questions")]
    NoAnswerable,

    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
