use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the screening and certification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("primal infeasible: x[{index}] = {value:e}")]
    PrimalInfeasible { index: usize, value: f64 },

    #[error("dual infeasible: (A^T nu)[{index}] = {value:e} below tolerance {tolerance:e}")]
    DualInfeasible {
        index: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("negative duality gap {gap:e} (tolerance {tolerance:e})")]
    NegativeGap { gap: f64, tolerance: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("passive-set subproblem is numerically rank deficient ({columns} columns, pivot ratio {ratio:e})")]
    NumericalRank { columns: usize, ratio: f64 },

    #[error("anchor is not strictly dual feasible: a_{index}^T nu = {value:e}")]
    StrictnessViolation { index: usize, value: f64 },

    #[error("matrix admits no strictly dual feasible point (optimal margin {margin:e})")]
    NoStrictPoint { margin: f64 },

    #[error("strict-feasibility condition failed: {0}")]
    ConditionFailed(String),

    #[error("Gram matrix has not been computed for this problem")]
    MissingGram,

    #[error("every column was eliminated")]
    AllEliminated,

    #[error("{subsets} column subsets exceed the enumeration limit of {limit}")]
    Intractable { subsets: u128, limit: u128 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
