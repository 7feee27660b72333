use thiserror::Error;

/// Errors produced anywhere in the decoding and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("logit vector contains a non-finite value at index {index}")]
    InvalidLogits { index: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vocabulary mismatch: expected {expected} entries, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },

    #[error("repetition penalty must be >= 1, got {0}")]
    InvalidPenalty(f64),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("context span needs at least 2 tokens to form an index (got {0})")]
    EmptyIndex(usize),

    #[error("no neighbors to build a copy distribution from")]
    EmptyNeighbors,

    #[error("confidence needs a vocabulary of at least 2 tokens (got {0})")]
    DegenerateVocabulary(usize),

    #[error("confidence value must lie in (0, 1], got {0}")]
    InvalidConfidence(f64),

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("token id {token} is outside the vocabulary of size {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid chunking: {0}")]
    InvalidChunking(String),

    #[error("query has no terms after tokenization")]
    EmptyQuery,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("need at least 5 non-zero paired differences, got {0}")]
    InsufficientData(usize),

    #[error("results for the baseline strategy `{0}` are missing")]
    MissingBaseline(String),

    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("prompt has {tokens} tokens, budget is {budget}")]
    PromptTooLong { tokens: usize, budget: usize },

    #[error("index snapshot: {0}")]
    Snapshot(String),

    #[error("instance `{id}`: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attaches the id of the dataset instance that was being processed.
    pub fn for_instance(self, id: impl Into<String>) -> Self {
        Error::Instance {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input data rather than a runtime
    /// failure. The CLI maps these to a distinct exit code.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Dataset { .. }
            | Error::Json(_)
            | Error::Snapshot(_)
            | Error::PromptTooLong { .. }
            | Error::EmptyQuery
            | Error::EmptyCorpus => true,
            Error::Instance { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
