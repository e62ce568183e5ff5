use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular block: pivot {pivot:e} below threshold {threshold:e}")]
    SingularBlock { pivot: f64, threshold: f64 },
    #[error("singular pivot block at block row {0}")]
    SingularPivot(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dense oracle too large: {size} > cap {cap}")]
    OracleTooLarge { size: usize, cap: usize },
    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid rank count {ranks}: {reason}")]
    InvalidRankCount { ranks: usize, reason: &'static str },
    #[error("inconsistent ranges: {0}")]
    InconsistentRanges(String),
    #[error("deadlock: ranks {0:?} wait on messages that were never sent")]
    DeadlockDetected(Vec<usize>),
    #[error("stage violation: {0}")]
    StageViolation(String),
    #[error("node {0} has no label")]
    UnlabeledNode(usize),
    #[error("subdomain {index} solve failed: {reason}")]
    SubdomainSolveFailure { index: usize, reason: String },
    #[error("iteration breakdown at step {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: &'static str },
    #[error("probing band too wide: 2d+1 = {probes} exceeds order {order}")]
    BandTooWide { probes: usize, order: usize },
    #[error("block order {block} smaller than half-bandwidth {bandwidth}")]
    BlockTooSmall { block: usize, bandwidth: usize },
    #[error("subdomain is not separable: {0}")]
    NotSeparable(String),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("solver failure at harmonic {harmonic}: {source}")]
    SolverFailure {
        harmonic: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the numerical kind, as opposed to I/O, format or
    /// parameter errors.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Format(_) | Error::InvalidParameter(_) | Error::OracleTooLarge { .. }
        )
    }
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
