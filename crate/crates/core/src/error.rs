use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected `{expected}`, got `{found}`")]
    Frame { expected: String, found: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("degenerate geometry, unconstrained direction: {0}")]
    Degenerate(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
