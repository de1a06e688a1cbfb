use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("filtering failed on day {day}: {reason}")]
    Filter { day: usize, reason: String },

    #[error("pricing error: {0}")]
    Pricing(String),

    #[error("MGF recursion singular at step {step} (1 - 2 alpha* B = {value})")]
    RecursionSingular { step: usize, value: f64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("degenerate Fisher information: all price sensitivities are zero")]
    DegenerateInformation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("implied volatility inversion failed: {0}")]
    Inversion(String),

    #[error("sensitivity error: {0}")]
    Sensitivity(String),

    #[error("optimizer stopped without convergence after {iterations} iterations (best ll {best_ll})")]
    NonConvergence { iterations: usize, best_ll: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
