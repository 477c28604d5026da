use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy for the whole crate. The CLI maps these onto exit codes:
/// usage/contract violations (1), data problems (2), numerical failures (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::InvalidConfig(_) => 1,
            Error::Data(_) | Error::Io(_) | Error::Wav(_) | Error::Json(_) | Error::Checkpoint(_) => 2,
            Error::Numerical(_) | Error::Tensor(_) => 3,
        }
    }
}

macro_rules! bail_input {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::InvalidInput(format!($($arg)*)))
    };
}

macro_rules! ensure_input {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::error::Error::InvalidInput(format!($($arg)*)));
        }
    };
}

macro_rules! ensure_config {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::error::Error::InvalidConfig(format!($($arg)*)));
        }
    };
}

macro_rules! bail_data {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Data(format!($($arg)*)))
    };
}

pub(crate) use {bail_data, bail_input, ensure_config, ensure_input};
