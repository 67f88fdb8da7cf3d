//! Coverage-hole detection workbench.
//!
//! A UAV flies over an urban grid, measures RSRP at each waypoint and tries to
//! reach a coverage hole (a cell whose RSRP falls below a threshold) in as few
//! steps as possible. This crate contains everything the pipeline needs:
//!
//! - [`gridworld`]: occupancy, line of sight, permissible moves, raster files
//! - [`mapgen`]: synthetic building maps and corpora
//! - [`propagation`]: deterministic RSRP coverage maps
//! - [`encoding`]: the agent's observation tensors and action geometry
//! - [`nn`]: a small tensor / convolution engine and the Q-network
//! - [`ddqn`]: reward, replay, double-Q targets and the training loop
//! - [`rollout`]: the trajectory executor shared by every predictor
//! - [`baselines`]: RSP, BNP, G-RSP and G-BNP
//! - [`eval`]: precision / recall harness and report emission
//! - [`config`]: `key = value` files shared by the configs

// `!(x > 0.0)` is how validation rejects NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod ddqn;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod mapgen;
pub mod nn;
pub mod propagation;
pub mod rollout;

pub use error::{Error, Result};
pub use gridworld::{BuildingMap, GridPoint};
pub use propagation::{BaseStation, CoverageMap, PropagationParams};

/// Building heights at or above this altitude (meters) block the UAV.
pub const DEFAULT_ALTITUDE_M: f64 = 2.0;
/// Meters per grid cell.
pub const DEFAULT_RESOLUTION_M: f64 = 4.0;
/// Grid side length in cells.
pub const DEFAULT_SIDE: usize = 121;
/// Coverage-hole threshold in dB.
pub const DEFAULT_EPS_CH: f64 = -100.0;
/// Maximum displacement per step in each cardinal direction (cells).
pub const DEFAULT_STEP_LIMIT: usize = 15;
/// Decay constant of the circular-gradient encodings.
pub const DEFAULT_DECAY: f64 = 0.1;
