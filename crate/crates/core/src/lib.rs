//! Simulation and numerics for continuous-time vertex-reinforced jump
//! processes on Galton-Watson trees.
//!
//! The walk jumps to a neighbour at rate c plus the time already spent
//! there; on a supercritical random tree with mean offspring b it is
//! recurrent or transient according to the sign of b * mu(c) - 1, where
//! mu is the minimal moment of the limiting occupation ratio of the
//! two-vertex walk. The crate provides the deterministic evaluation of
//! mu and its relatives ([`mu`], [`bessel`], [`quad`]), exact samplers
//! for the fundamental laws ([`sampling`]), random trees ([`trees`]),
//! the walk itself ([`walk`]), the branching-chain machinery behind the
//! phase transition ([`branching`]) and a reproducible experiment
//! harness ([`experiments`]).

pub mod bessel;
pub mod branching;
pub mod error;
pub mod experiments;
pub mod mu;
pub mod quad;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod trees;
pub mod walk;

pub use error::{Error, Result};
pub use quad::Quadrature;
pub use rng::RngStream;
pub use trees::{OffspringDistribution, RootedTree};
