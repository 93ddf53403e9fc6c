use thiserror::Error;

/// Errors raised by the laboratory.
///
/// Variants split into two families: input problems ([`Error::is_validation`])
/// and numerical failures detected while computing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("oscillation under-resolved: phase increment {increment:.4} per cell exceeds {limit:.4}")]
    UnderResolved { increment: f64, limit: f64 },

    #[error("weight overflow at node {node} (x = {x:.4}, F = {value:.4})")]
    Overflow { node: usize, x: f64, value: f64 },

    #[error("dense materialization unavailable for n = {n} (limit {limit})")]
    DenseUnavailable { n: usize, limit: usize },

    #[error("{what} did not converge (achieved {achieved:.3e}, target {target:.3e})")]
    NoConvergence {
        what: String,
        achieved: f64,
        target: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by inputs rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::GridMismatch | Error::UnderResolved { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid_input",
            Error::GridMismatch => "grid_mismatch",
            Error::UnderResolved { .. } => "under_resolved",
            Error::Overflow { .. } => "overflow",
            Error::DenseUnavailable { .. } => "dense_unavailable",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Numerical(_) => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
