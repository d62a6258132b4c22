//! On-policy imitation learning from a converging supervisor.
//!
//! The crate runs DAgger-style loops in which a learner policy executes in a
//! point-mass environment, an indexed supervisor `psi_i` relabels the visited
//! states, and the learner is updated by one of several online players. The
//! recorded rounds are then scored with static and dynamic regret against both
//! the per-round labels and the labels of the final supervisor.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod imitation;
pub mod nn;
pub mod policy;
pub mod regret;
pub mod rng;
pub mod supervisor;

pub use error::{Error, Result};
