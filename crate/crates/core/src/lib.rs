//! Core library of the crop-management policy workbench: a deterministic
//! daily-step crop/soil simulator, reward shaping, small dense neural nets,
//! Q-learning and behavior-cloning trainers, and evaluation plumbing.

pub mod action;
pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod imitation;
pub mod nn;
pub mod policies;
pub mod reward;
pub mod seeds;
pub mod weather;

pub use error::{Error, Result};
