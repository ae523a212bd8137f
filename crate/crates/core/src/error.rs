use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the dispatch pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("point ({lat}, {lon}) lies outside the region")]
    OutOfRegion { lat: f64, lon: f64 },

    #[error("schema error: {0}")]
    Schema(String),
    #[error("likelihood diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("rate overflow: linear predictor {0} is not representable")]
    RateOverflow(f64),
    #[error("no observations")]
    NoObservations,

    #[error("unknown segment {0}")]
    UnknownSegment(u64),
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("no route from node {from} to node {to}")]
    NoRoute { from: u64, to: u64 },

    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("no free responder")]
    EmptyActionSet,
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Io { .. } => ErrorKind::Usage,
            Error::Divergence { .. } | Error::RateOverflow(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}
