use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right} characters")]
    LengthMismatch { left: usize, right: usize },

    #[error("span {start}..{end} does not align to token boundaries")]
    Alignment { start: usize, end: usize },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("secret `{0}` would not survive tokenization as a single token")]
    TokenizationHazard(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsatisfiable constraints: {0}")]
    Unsatisfiable(String),

    #[error("attempt budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("input must contain only ASCII digits: `{0}`")]
    NonDigit(String),

    #[error("target `{0}` is not among the candidates")]
    TargetAbsent(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: String },

    #[error("file truncated")]
    Truncated,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
