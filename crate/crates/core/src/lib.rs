//! Offline reinforcement learning with grid-mapping pseudo-counts.
//!
//! Continuous state-action pairs are discretized on a grid derived from the
//! dataset's ranges and counted; the resulting count-based penalty lowers the
//! Q-value targets of actions the policy proposes, and a soft actor-critic
//! learner trains on those targets.

pub mod count;
pub mod data;
pub mod envs;
pub mod error;
pub mod nn;
pub mod sac;
pub mod verify;

pub use error::{Error, Result};
