//! Exact all-terminal reliability optimization for series-parallel networks.
//!
//! A series-parallel network with unreliable edges is described by a
//! composition sequence: starting from single edges, larger blocks are built
//! by joining two existing blocks in series or in parallel until one root
//! block remains. For such networks the all-terminal reliability (the
//! probability that the operational edges connect every vertex) has a closed
//! form that [`reliability::evaluate`] computes in linear time.
//!
//! The optimization problem treated here is edge selection: keep a subset of
//! edges subject to a cardinality budget (and optional extra linear
//! restrictions) so that the reliability of the selected subnetwork is
//! maximal. [`bnb::solve`] answers it exactly with a branch-and-cut search
//! whose LP relaxations linearize each bilinear/fractional composition step
//! through concave envelopes ([`envelopes`], [`model`]) and are solved by a
//! built-in bounded-variable simplex ([`lp`]).
//!
//! Brute-force oracles ([`reliability::oracle_reliability`],
//! [`reliability::oracle_optimize`]) provide an independent route to the
//! same answers at small sizes and back the test suite.

pub mod bnb;
pub mod cli;
pub mod envelopes;
mod error;
pub mod lp;
pub mod model;
pub mod reliability;
pub mod spgraph;

pub use error::Error;
