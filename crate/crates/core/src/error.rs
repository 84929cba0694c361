use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (corpus records, trend rows, matrices).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Matrix or operand shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid runtime input (NaN costs, mode mismatches, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
