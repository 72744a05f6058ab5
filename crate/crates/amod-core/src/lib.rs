//! Fleet rebalancing for station-based autonomous mobility-on-demand
//! systems: network and demand models, the rebalancing MDP simulator,
//! exact flow solvers for matching and repositioning, and a graph-neural
//! actor-critic trained with advantage estimates.

pub mod agent;
pub mod baselines;
pub mod demand;
pub mod error;
pub mod flow;
pub mod gen;
pub mod mat;
pub mod network;
pub mod nn;
pub mod scenario;
pub mod sim;

pub use error::{AmodError, Result};
