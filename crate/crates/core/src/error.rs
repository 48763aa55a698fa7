use alloc::string::String;
use alloc::vec::Vec;

use crate::model::AssumptionReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("model assumptions violated: {}", .0.failures().join("; "))]
    AssumptionViolation(AssumptionReport),

    #[error("hamiltonian minimizer did not reach stationarity after {iterations} iterations (residual {residual:e})")]
    MinimizerBudget {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("inner fixed point did not contract at step {step}, node {node} (residual {residual:e})")]
    InnerFixedPoint { step: usize, node: usize, residual: f64 },

    #[error("transport problem of size {rows}x{cols} exceeds the limit of {limit} cells")]
    TransportTooLarge { rows: usize, cols: usize, limit: usize },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
