use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite {what} at time {time}")]
    NonFinite { what: &'static str, time: f64 },

    #[error("simulation exploded at time {time}")]
    Explosion { time: f64 },

    #[error("nonpositive volatility {value} at time {time}")]
    NonPositiveVolatility { value: f64, time: f64 },

    #[error("parameter `{name}` = {value} outside its support")]
    OutOfSupport { name: String, value: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("inconsistent state: {0}")]
    InconsistentState(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Explosion { .. }
                | Error::NonPositiveVolatility { .. }
                | Error::InconsistentState(_)
        )
    }
}
