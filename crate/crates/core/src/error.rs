use thiserror::Error;

/// Errors raised anywhere in the planning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("registration error: {0}")]
    Registration(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("payload mismatch: expected {expected} bytes, found {found}")]
    PayloadMismatch { expected: usize, found: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input, as opposed to runtime or limit
    /// failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::UnsupportedGeometry(_)
                | Error::Registration(_)
                | Error::UndefinedMetric(_)
                | Error::Degenerate(_)
                | Error::Header(_)
                | Error::PayloadMismatch { .. }
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
