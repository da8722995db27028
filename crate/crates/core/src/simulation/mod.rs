//! Seeded generators: behavior traces from an archetype library, virtual
//! users with a planted occupation community, and rank-swap noise.

mod archetype;
mod users;

use thiserror::Error;

pub use archetype::{
    Archetype, ArchetypeLibrary, Phase, Separability, Signature, SizeDistribution, ARCHETYPE_FORMAT_VERSION,
};
pub use users::{
    community_affinity, complete_ranking, gen_user, perturb_ranks, read_users_csv, simulate_users, write_users_csv,
    UserRanks, VirtualUser, VirtualUserSpec,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("archetype library: {0}")]
    Archetype(String),
    #[error("{requested} agents requested but only {support} have positive weight")]
    InsufficientAgents { requested: usize, support: usize },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}
