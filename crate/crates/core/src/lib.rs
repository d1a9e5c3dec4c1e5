//! Reinforcement learning from scaled human preferences.
//!
//! A policy is trained with PPO on a reward model fitted to pairwise segment
//! preferences. Labels in `[0, 1]` express how strongly one segment is preferred;
//! a regression estimator can answer part of the label budget.

pub mod cli;
pub mod envlib;
pub mod error;
pub mod estimator;
pub mod label_service;
pub mod numerics;
pub mod oracle;
pub mod orchestrator;
pub mod policy;
pub mod reward_model;
pub mod trajectory;

pub use error::{Error, Result};
