use thiserror::Error;

/// Errors raised by the library modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty lexicon")]
    EmptyLexicon,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: score {value} for '{word}' is outside [0, 1]")]
    ScoreOutOfRange {
        line: usize,
        word: String,
        value: f64,
    },

    #[error("line {line}: duplicate word '{word}'")]
    DuplicateWord { line: usize, word: String },

    #[error("label not in lexicon: '{0}'")]
    LabelNotInLexicon(String),

    #[error("degenerate rescale range")]
    DegenerateRange,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("probability mass mismatch: target sums to {target}, prediction sums to {pred}")]
    MassMismatch { target: f64, pred: f64 },

    #[error("cannot normalize an all-zero {0} vector")]
    ZeroMass(&'static str),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("non-finite value at batch {batch}: {what}")]
    Diverged { batch: usize, what: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("join failure: {0}")]
    JoinFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
