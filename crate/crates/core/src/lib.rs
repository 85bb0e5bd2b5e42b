//! Signalized intersection experiments on a point-queue simulator: classic
//! controllers (fixed time, Webster, SOTL) and a DQN phase selector.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod control;
pub mod demand;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use sim::{Action, IntersectionSim, Observation};
pub use types::{
    build_grid_network, build_standard_intersection, Approach, IntersectionConfig, LaneId, Link, Movement,
    NetworkConfig, PhaseDefinition, Vehicle,
};
