use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VqpError {
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("bad mel range: {0}")]
    BadMelRange(String),
    #[error("too many coefficients: requested {requested}, have {available} mel bins")]
    TooManyCoefficients { requested: usize, available: usize },
    #[error("undefined GPE: no co-voiced frames to compare")]
    UndefinedGpe,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate factor: column {0} is constant")]
    DegenerateFactor(usize),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("empty counter: no steps recorded")]
    EmptyCounter,
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("no recorded computation: backward called without a preceding forward")]
    NoRecordedComputation,
    #[error("divergence at step {step}: {term} is not finite")]
    Divergence { step: usize, term: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("audio format error: {0}")]
    AudioFormat(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VqpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VqpError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, VqpError>;
