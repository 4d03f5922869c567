use thiserror::Error;

/// Coarse error classes, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Convergence,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("fixed point did not converge after {iterations} sweeps (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("estimation did not converge: best objective {objective:e}, gradient norm {gradient_norm:e}")]
    EstimationFailed { objective: f64, gradient_norm: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("rank deficiency in parameter block {0}")]
    RankDeficient(String),

    #[error("exposure cell {0} was not estimated")]
    AbsentCell(String),

    #[error("{failures} of {reps} replications failed, above the abort threshold")]
    TooManyFailures { failures: usize, reps: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSize(_)
            | Error::InvalidInput(_)
            | Error::Precondition(_)
            | Error::DimensionMismatch(_)
            | Error::AbsentCell(_)
            | Error::Parse { .. } => ErrorKind::Validation,
            Error::NonConvergence { .. }
            | Error::EstimationFailed { .. }
            | Error::TooManyFailures { .. } => ErrorKind::Convergence,
            Error::Singular(_) | Error::RankDeficient(_) | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(_) => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
