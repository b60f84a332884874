use thiserror::Error;

/// Errors raised by the market, solver and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("volatility not invertible at y={y:?}, z={z:?}, t={t} (condition number {condition:e})")]
    SingularVolatility {
        y: Vec<f64>,
        z: Vec<f64>,
        t: f64,
        condition: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("explicit scheme unstable: dt = {dt:e} exceeds bound {max_dt:e}; need at least {required_steps} time steps")]
    Unstable {
        dt: f64,
        max_dt: f64,
        required_steps: usize,
    },

    #[error("NaN in value slice {slice}")]
    NanSlice { slice: usize },

    #[error("scenario error at line {line}: {message}")]
    Scenario { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        what: what.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
