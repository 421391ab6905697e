use thiserror::Error;

use crate::pool::{Cell, PoolKind};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("unknown {kind} id {id}")]
    Lookup { kind: &'static str, id: u64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{kind:?} cells already allocated: {cells:?}")]
    Conflict { kind: PoolKind, cells: Vec<Cell> },

    #[error("cell out of range: {0}")]
    Bounds(String),

    #[error("invalid block request: {0}")]
    InvalidRequest(String),

    #[error("sensing geometry violated: {0}")]
    SensingGeometry(String),

    #[error("ownership violated: {0}")]
    Ownership(String),

    #[error("target outside the communication beam: {0}")]
    RegionRestriction(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("invalid decision: {0}")]
    Decision(String),

    #[error("graph structure: {0}")]
    Structure(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no feasible action: {0}")]
    Feasibility(String),

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("push rejected, base version {base} older than {current} - {bound}")]
    StalePush { base: u64, current: u64, bound: u64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("instance too large for exhaustive search: {0}")]
    Size(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn lookup(kind: &'static str, id: impl Into<u64>) -> Self {
        Error::Lookup { kind, id: id.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
