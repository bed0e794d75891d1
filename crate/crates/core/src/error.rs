use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid operator structure: {0}")]
    InvalidStructure(String),

    #[error("hyperedge {edge} shares no vertex with its owner worker {owner}")]
    EmptyHyperedgeIntersection { edge: usize, owner: usize },

    #[error("invalid owner map: {0}")]
    InvalidOwnerMap(String),

    #[error("worker {worker} is missing halo value for vertex {vertex}")]
    MissingHalo { worker: usize, vertex: usize },

    #[error(
        "non-finite or divergent state at iteration {iteration}: {variable}[{index}] = {value}"
    )]
    NonFiniteState {
        iteration: u64,
        variable: String,
        index: usize,
        value: f64,
    },

    #[error("transport failure: {0}")]
    TransportFailure(String),

    /// A peer's connection ended; raised by backends, reported by
    /// [`crate::transport::Endpoint`] as a transport failure once that
    /// peer is waited on.
    #[error("connection to rank {0} closed")]
    PeerClosed(usize),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("tile {tile_rows}x{tile_cols} too small for halo width {halo}")]
    TileTooSmall {
        tile_rows: usize,
        tile_cols: usize,
        halo: usize,
    },

    #[error("empty sample buffer")]
    EmptyBuffer,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
