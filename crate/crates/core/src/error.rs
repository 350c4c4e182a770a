use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("history not warm: have {have} of {need} frames")]
    HistoryNotWarm { have: usize, need: usize },

    #[error("symmetric positive-definite solve failed")]
    SolveFailure,

    #[error("sequence too short: need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("no session has the {need} consecutive frames training needs")]
    DataTooShort { need: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("too few frames for a report: {0}")]
    TooFew(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that indicate numerical corruption rather than bad
    /// input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SolveFailure | Error::DegenerateInput(_))
    }
}
