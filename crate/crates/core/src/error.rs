use thiserror::Error;

use crate::types::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid micro-cluster: {0}")]
    InvalidCluster(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("clock moved backwards: {now} < {clock}")]
    ClockRegression { now: Timestamp, clock: Timestamp },
    #[error("model index {index} outside 1..={m_u}")]
    ModelIndexOutOfRange { index: usize, m_u: usize },
    #[error("node id must be at least 1")]
    InvalidNodeId,
    #[error("symbol {symbol} does not decode for m_u = {m_u}")]
    NotDecodable { symbol: u32, m_u: usize },
    #[error("brute-force LCS limited to length {limit}, got {len}")]
    BruteForceTooLong { len: usize, limit: usize },
    #[error("assignment log is empty")]
    EmptyLog,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("invalid generator input: {0}")]
    InvalidGenerator(String),
}
