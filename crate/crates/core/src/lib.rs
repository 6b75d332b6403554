//! Tabular dynamic programming and model-free learning built around the
//! greedy multi-step Bellman optimality operator.
//!
//! The crate is organised in five layers:
//!
//! - [`mdp`]: finite MDPs, value tables, policies, trajectories and the
//!   per-(state, action) trajectory store, plus the text formats.
//! - [`envs`]: reference environments (grid world, trace back, choice,
//!   highway chain, random MDPs) and episode sampling.
//! - [`exact_dp`]: model-based operators, value-iteration drivers and the
//!   optimal-value oracle.
//! - [`model_free`]: greedy multi-step Q-learning and the baselines, online
//!   and offline.
//! - [`harness`]: seeded multi-trial experiments, contraction-rate reports
//!   and the property suite.

pub mod envs;
pub mod error;
pub mod exact_dp;
pub mod harness;
pub mod mdp;
pub mod model_free;

pub use error::{Error, Result};
