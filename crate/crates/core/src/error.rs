use thiserror::Error;

use crate::divergence::DivergenceKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("divergence {kind:?} infinite/undefined at input (p={p}, q={q})")]
    DivergenceUndefined { kind: DivergenceKind, p: f64, q: f64 },

    #[error("root solver failed to reach tolerance {tol:e}; last bracket [{lo}, {hi}]")]
    SolverFailure { lo: f64, hi: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("extent {0} is not a power of two")]
    ExtentNotPowerOfTwo(f64),

    #[error("point ({p}, {q}) lies outside the partition domain")]
    OutOfDomain { p: f64, q: f64 },

    #[error("Chebyshev degree cap {cap} exceeded (L={interval_length}, eps={eps:e}); eps below working precision?")]
    DegreeCapExceeded {
        interval_length: f64,
        eps: f64,
        cap: usize,
    },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index ({row}, {col}) out of range for {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("Stirling form undefined at row {row}, column {col}")]
    StirlingUndefined { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("block (level {level}, index {index}) failed: {source}")]
    BlockFailure {
        level: i32,
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
