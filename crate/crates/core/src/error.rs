use thiserror::Error;

use crate::bounds::BoundReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in layer {layer}: {context}")]
    Numeric { layer: usize, context: String },

    #[error("training diverged at epoch {epoch}: {context}")]
    Diverged { epoch: usize, context: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("no feasible epoch among {} reports", reports.len())]
    NoFeasibleEpoch { reports: Vec<BoundReport> },

    /// Carries `(depth, held-out divergence)` for every probed depth.
    #[error("no depth reached the divergence threshold {threshold}")]
    NoMinimalDepth {
        threshold: f64,
        table: Vec<(usize, f64)>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for the "searched but found nothing admissible" outcomes.
    pub fn is_infeasible_outcome(&self) -> bool {
        matches!(self, Error::NoFeasibleEpoch { .. } | Error::NoMinimalDepth { .. })
    }
}
