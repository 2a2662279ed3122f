use thiserror::Error;

/// Errors raised by the simulator and the verification oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("margin problem infeasible or unconverged: {0}")]
    InfeasibleOrUnconverged(String),

    #[error("numerical divergence{}: {detail}", source_id.map(|s| format!(" at source {s}")).unwrap_or_default())]
    NumericalDivergence {
        source_id: Option<usize>,
        detail: String,
    },

    #[error("graph construction failed: {0}")]
    Topology(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Attaches a source/node id to a divergence error raised deeper down.
    pub fn with_source(self, id: usize) -> Self {
        match self {
            Error::NumericalDivergence { detail, .. } => Error::NumericalDivergence {
                source_id: Some(id),
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
