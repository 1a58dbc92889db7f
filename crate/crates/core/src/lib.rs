//! Proximal state nudging: learning-aware shared autonomy.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`] - GridTrack and MiniLander simulators with snapshot/restore.
//! * [`agents`] - policies, tabular and double-Q learners, value iteration.
//! * [`assist`] - policy blending, adaptive assistance, Q-gap override.
//! * [`zpd`] - the learnability estimator built from assisted vs unassisted returns.
//! * [`planner`] - beam-search action selection scoring learnability and return.
//! * [`harness`] - the training/evaluation loop, records, summaries.
//! * [`session`] - human-in-the-loop sessions driven tick by tick.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precisions used by the rest of the crate.

pub mod agents;
pub mod assist;
pub mod env;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod scalar;
pub mod session;
pub mod stats;
pub mod zpd;

pub use scalar::Scalar;

/// Precision of environment states, returns and learnability values.
pub type Real = f64;
/// Precision of the approximate Q-networks.
pub type NetReal = f32;

pub type ActionDistribution = agents::ActionDistribution<Real>;
pub type QTable = agents::QTable<Real>;
pub type QNetwork = nn::Mlp<NetReal>;
pub type PhiEstimator = zpd::ZpdEstimator<Real>;

pub use env::{ActionId, EnvKind, Environment, StateVector, StepOutcome, TerminalKind};
