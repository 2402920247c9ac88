//! Corruption-robust offline RLHF over linear MDPs.
//!
//! The crate covers the full chain from a simulated environment to a
//! returned policy: preference data generation and corruption, robust
//! reward estimation with confidence sets, robust mean estimation,
//! zero-order optimisation over the reward confidence set, and several
//! policy-optimisation oracles.

pub mod contamination;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod pipeline;
pub mod preference;
pub mod reward;
pub mod robust_stats;
pub mod seed;
pub mod zero_order;

pub use error::{Error, Result};
