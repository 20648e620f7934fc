use thiserror::Error;

use crate::taskgraph::{NodeId, VertexId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown vertex {vertex} in node {node}")]
    UnknownVertex { node: NodeId, vertex: VertexId },
    #[error("precedence violation: {vertex} in node {node} is missing predecessor {missing}")]
    PrecedenceViolation {
        node: NodeId,
        vertex: VertexId,
        missing: VertexId,
    },
    #[error("timestamp {t} precedes the last recorded timestamp {last}")]
    NonMonotonicTime { t: u64, last: u64 },
    #[error("collaborative vertices {a} and {b} in node {node} completed at different times")]
    CollaborativeMismatch {
        node: NodeId,
        a: VertexId,
        b: VertexId,
    },
    #[error("graph has more than {limit} routes")]
    RouteExplosion { limit: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("subtask of node {0} has no ready vertex")]
    NoReadyVertex(NodeId),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("bad filter parameters: {0}")]
    BadParams(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("moving-average kernel {0} must be odd and at most the window length")]
    BadKernel(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged (non-finite value)")]
    DivergedLoss,
    #[error("vertex {vertex} in node {node} has no motion primitive")]
    UnmappedVertex { node: NodeId, vertex: VertexId },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no log entries")]
    EmptyLogs,
    #[error("no trial records")]
    EmptyRecords,
    #[error("i/o error: {0}")]
    Io(String),
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
