use thiserror::Error;

use crate::geometry::Vec3;
use crate::octree::NodeKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("neuron {id} at {position:?} lies outside the domain")]
    OutsideDomain { id: u64, position: Vec3 },

    #[error("neurons {first} and {second} share the position {position:?}")]
    DuplicatePosition { first: u64, second: u64, position: Vec3 },

    #[error("neurons {first} and {second} cannot be separated within {max_level} tree levels")]
    TooDeep { first: u64, second: u64, max_level: u32 },

    #[error("unknown neuron id {0}")]
    UnknownNeuron(u64),

    #[error("branch set is missing subtree {key} owned by rank {rank}")]
    MissingBranch { rank: u32, key: NodeKey },

    #[error("rank {rank} is not part of the run")]
    MissingRank { rank: u32 },

    #[error("expansion requires at least one weighted source")]
    EmptySources,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed message: {0}")]
    Wire(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("step {step}, rank {rank}: {source}")]
    Simulation {
        step: u64,
        rank: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
