//! Online clustering of discrete symbol sequences.
//!
//! Trajectories are encoded per grid cell into quadrant-mask symbols, each
//! cell's stream is clustered by a node holding weighted micro-clusters, and
//! the nodes' match results are re-encoded and clustered again one layer up.

pub mod clusterer;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod merge;
pub mod similarity;
pub mod synthgen;
pub mod topology;
pub mod types;

pub use clusterer::{Assignment, Ingested, MatchEvent, ModelId, NodeSnapshot, NodeState, NodeStats};
pub use error::{Error, Result};
pub use types::{decay_weight, Hyperparams, MicroCluster, Sequence, Symbol, Timestamp};
