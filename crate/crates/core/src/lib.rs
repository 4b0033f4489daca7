//! Sample-efficient robust policy search.
//!
//! A linear Thompson-sampling bandit learns how a policy's return varies over
//! an ensemble of model parameters, and trajectories are then collected only
//! where the bandit predicts the worst `epsilon` fraction of returns. This
//! replaces the blind sample-then-discard step of CVaR policy optimization.

pub mod bandit;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod eval;
pub mod policy;
pub mod records;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
