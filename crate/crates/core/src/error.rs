use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants split into two families: input validation (bad arguments, bad
/// files) and computation failures (non-finite states, degenerate fits).
/// The CLI maps the first family to exit code 1 and the second to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: t = {t} is not before the critical time tc = {tc}")]
    Domain { t: f64, tc: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("series are not aligned: {0:?}")]
    Alignment(Vec<String>),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fBM generation failed for schedule {schedule}: {msg}")]
    Generation { schedule: String, msg: String },

    #[error("simulation overflow at step {step}")]
    SimulationOverflow { step: usize },

    #[error("degenerate design matrix (condition number {cond:.3e})")]
    DegenerateDesign { cond: f64 },

    #[error("LPPL fit failed: {0}")]
    FitFailure(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than by a
    /// numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Domain { .. }
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Alignment(_)
                | Error::InsufficientData { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
