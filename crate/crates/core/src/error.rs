use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending line, field, or tensor without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid utf-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },

    #[error("corpus line {line}: {msg}")]
    CorpusLine { line: usize, msg: String },

    #[error("corpus line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },

    #[error("corpus line {line}: score {value} outside [1,5]")]
    ScoreOutOfRange { line: usize, value: i64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("token id {id} out of range for vocabulary of size {vocab_size} (position {position})")]
    IdOutOfRange {
        id: usize,
        vocab_size: usize,
        position: usize,
    },

    #[error("{context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("topic index {topic} out of range for K={k}")]
    TopicOutOfRange { topic: usize, k: usize },

    #[error("topic count mismatch: model has K={model_k}, LDA has K={lda_k}")]
    TopicCountMismatch { model_k: usize, lda_k: usize },

    #[error("document {index} routed to topic {got}, expected topic {expected}")]
    MislabeledDocument {
        index: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("checkpoint error in {path}: {msg}")]
    Checkpoint { path: String, msg: String },

    #[error("vocabulary hash mismatch: artifact built against {expected}, got {got}")]
    VocabHashMismatch { expected: String, got: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
