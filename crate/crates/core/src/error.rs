use thiserror::Error;

/// Errors raised by the control, estimation and simulation layers.
///
/// Solver infeasibility and failed certificate checks are not errors; they are
/// reported as statuses on the corresponding result types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("estimator update scheduled at t={requested} but the next sample is due at t={expected}")]
    Schedule { requested: f64, expected: f64 },

    #[error("brute-force oracle supports at most {limit} constraints, got {constraints}")]
    OracleScope { constraints: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
