//! Occupation network, community probing and occupation inference.
//!
//! Occupations are linked by the Sørensen similarity of their DWA (detailed
//! work activity) profiles. After a partition into communities is installed,
//! each agent is probed by the modularity gain of attaching it to every
//! community; those gains become log-RCA scores, and a user's ranked agent
//! list is turned into a community ranking by an exponentially weighted
//! average of the agents' score rows.

mod louvain;
mod network;
mod rca;
mod taxonomy;

use thiserror::Error;

pub use louvain::louvain;
pub use network::{
    read_partition_csv, sorensen, write_partition_csv, OccupationNetwork, Partition, PartitionRow, WeightedGraph,
    NETWORK_FORMAT_VERSION,
};
pub use rca::{
    correlate, infer_occupation, probe_agent, rca_scores, topk_hit, CorrelationMatrix, Inference, Profiler,
    DEFAULT_ALPHA, RCA_EPSILON,
};
pub use taxonomy::{read_agent_profiles, AgentProfile, Occupation, Taxonomy};

#[derive(Debug, Error)]
pub enum OccupationError {
    #[error("{file} line {line}: unknown reference `{id}`")]
    DanglingReference { file: String, line: usize, id: String },
    #[error("duplicate code `{0}`")]
    DuplicateCode(String),
    #[error("unknown occupation `{0}`")]
    UnknownOccupation(String),
    #[error("agent `{agent}` references unknown DWA `{dwa}`")]
    UnknownDwa { agent: String, dwa: String },
    #[error("agent `{0}` has an empty DWA profile")]
    EmptyProfile(String),
    #[error("network has zero total weight")]
    DegenerateNetwork,
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),
    #[error("no community partition installed")]
    NoPartition,
    #[error("rank list is empty")]
    EmptyRanks,
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}
