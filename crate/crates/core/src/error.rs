use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed graph or model: cycles, bad indices, singular `I - B`.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Several candidates are indistinguishable under the configured tolerance.
    #[error("ambiguous result: {message} (candidates: {candidates:?})")]
    Ambiguity {
        message: String,
        candidates: Vec<usize>,
    },

    /// The estimated quantities contradict the model assumptions.
    #[error("inconsistent estimate: {0}")]
    Inconsistency(String),

    #[error("regression on a zero predictor row (node {0})")]
    DegeneratePredictor(usize),

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        /// Best iterate, serialized so callers can inspect it.
        best: Option<Box<serde_json::Value>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
            Error::Ambiguity { .. } => 3,
            Error::Structural(_) | Error::Inconsistency(_) | Error::DegeneratePredictor(_) => 4,
            Error::NotConverged { .. } => 5,
        }
    }
}
