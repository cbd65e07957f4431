//! Multi-task inverse reinforcement learning with a shared baseline reward.
//!
//! Each task's reward is recovered from demonstrations through a learned VR
//! function (reward plus discounted optimal value); a baseline reward network
//! shared by all tasks penalizes how far each task's reward departs from it.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod demos;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mdp;
pub mod seed;
pub mod terrain;
pub mod trainer;
pub mod vrfn;
pub mod world;

pub use error::{Error, Result};
