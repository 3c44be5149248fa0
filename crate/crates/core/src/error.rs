use thiserror::Error;

/// Errors raised while configuring, initializing or running a study.
#[derive(Debug, Error)]
pub enum Error {
    /// Static data is inconsistent (dangling branch, zero impedance, bad parameter).
    #[error("configuration error: {0}")]
    Config(String),

    /// A configuration key violates an invariant.
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    /// The configuration text could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A scenario references something that does not exist.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// Linear algebra failure.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Power flow or converter initialization failed.
    #[error("initialization error: {0}")]
    Initialization(String),

    /// Time-domain integration failed.
    #[error("simulation error at t = {t:.4} s: {message}")]
    Simulation { t: f64, message: String },

    /// A stability verdict could not be formed.
    #[error("verdict error: {0}")]
    Verdict(String),

    /// The CCT harness precondition failed.
    #[error("harness error: {0}")]
    Harness(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
