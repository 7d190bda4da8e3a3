//! Structural-plasticity network simulation.
//!
//! Neurons grow and retract synaptic elements under calcium-driven
//! homeostasis; vacant axons and dendrites are paired through a stochastic
//! descent over a spatial octree in which box-to-box attractions of the
//! Gaussian kernel are evaluated directly or through truncated Hermite and
//! Taylor expansions.

pub mod baseline;
pub mod connectivity;
pub mod error;
pub mod expansion;
pub mod experiments;
pub mod geometry;
pub mod model;
pub mod octree;
pub mod rank;
pub mod rng;
pub mod sampling;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Cell, Vec3};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/octree.md")]
    struct Octree;
    #[doc = include_str!("../../../book/src/expansions.md")]
    struct Expansions;
    #[doc = include_str!("../../../book/src/connectivity.md")]
    struct Connectivity;
    #[doc = include_str!("../../../book/src/distributed.md")]
    struct Distributed;
    #[doc = include_str!("../../../book/src/baselines.md")]
    struct Baselines;
    #[doc = include_str!("../../../book/src/running.md")]
    struct Running;
}
