use thiserror::Error;

/// Unified error type for every solver and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coefficient `{name}` at probe (x={x}, u={u}, t={t})")]
    NonFiniteCoefficient { name: String, x: f64, u: f64, t: f64 },

    #[error("state exceeded {threshold:e} at path {path}, step {step}")]
    BlowUp {
        path: usize,
        step: usize,
        threshold: f64,
    },

    #[error("regression normal matrix near-singular at step {step} (condition number {cond:e})")]
    SingularRegression { step: usize, cond: f64 },

    #[error("Picard correction did not contract at step {step} (relative change {rel})")]
    NonConvergent { step: usize, rel: f64 },

    #[error("epsilon {epsilon} gives non-positive estimate prefactor {prefactor}")]
    InvalidEpsilon { epsilon: f64, prefactor: f64 },

    #[error("delta {delta} gives non-positive stability prefactor {prefactor}")]
    InvalidDelta { delta: f64, prefactor: f64 },

    #[error("cost integrand is non-finite")]
    NonFiniteCost,

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("assumption validation failed: {0}")]
    AssumptionsViolated(String),

    #[error("Riccati integration found no stabilizing solution")]
    NoStabilizingSolution,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
