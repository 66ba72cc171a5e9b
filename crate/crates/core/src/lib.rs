//! Anomaly detection for reinforcement-learning state observations.
//!
//! The crate fits per-class Gaussian models to policy features, scores new
//! states by (robust) Mahalanobis distance against a chi-square threshold,
//! generates noise/adversarial/out-of-distribution outliers, and wires both
//! an evaluation-phase accuracy harness and an online training loop that
//! detects and deletes contaminated trajectories while a PPO agent learns.

// The numeric kernels index into symmetric matrices by (row, col); iterator
// rewrites of those loops obscure the triangular index arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod detectors;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod numstat;
pub mod online;
pub mod outliers;
pub mod toyrl;

pub use error::{Error, Result};
