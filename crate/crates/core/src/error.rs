use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-positive weight {value} at index {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("invalid state at cell ({i}, {j}): {reason}")]
    InvalidState { i: isize, j: isize, reason: String },

    #[error("inflow decode failed at boundary cell ({i}, {j})")]
    InflowDecode { i: isize, j: isize },

    #[error("negative eddy viscosity {value} at cell {cell}")]
    NegativeEddyViscosity { cell: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("tangent response in row {row} is not reproduced by the assembled pattern (mismatch {mismatch:e})")]
    OffPattern { row: usize, mismatch: f64 },

    #[error("receptive field violation: measured radius {measured}, declared {declared}, limit {limit}; offsets {offsets:?}")]
    ReceptiveField {
        measured: usize,
        declared: usize,
        limit: usize,
        offsets: Vec<(isize, isize)>,
    },

    #[error("Newton solve did not converge after {iterations} iterations (last residual {last_residual:e})")]
    NotConverged {
        iterations: usize,
        last_residual: f64,
        history: Vec<crate::solver::IterRecord>,
    },

    #[error("state stayed invalid after {retries} CFL reductions: {reason}")]
    PersistentInvalid { retries: usize, reason: String },

    #[error("only {converged} of {requested} dataset samples converged")]
    DatasetShort { converged: usize, requested: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}
