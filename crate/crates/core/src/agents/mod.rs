//! Student and expert policies, their learning rules, and the exact DP oracle.

mod checkpoint;
mod dist;
mod dqn;
mod expert;
mod replay;
mod tabular;
mod value_iteration;

pub use checkpoint::{Checkpoint, CheckpointBody, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dist::ActionDistribution;
pub use dqn::{double_q_targets, DqnConfig, DqnLearner, QNet};
pub use expert::{evaluate_greedy, load_expert, train_expert, ExpertBudget, ExpertReport};
pub(crate) use expert::lander_input_scale;
pub use replay::{ReplayBuffer, Transition};
pub use tabular::{train_tabular, QTable, TabularBudget, TabularLearner, TableIndex};
pub use value_iteration::{value_iteration, value_iteration_env, ValueIterationReport};

use thiserror::Error;

use crate::env::StateVector;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("epsilon {0} outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("non-finite TD target {target} for action {action}; update skipped")]
    NonFiniteTarget { target: f64, action: usize },
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("distribution invalid: {0}")]
    InvalidDistribution(String),
    #[error("environment is not enumerable; value iteration needs a finite MDP")]
    NotEnumerable,
    #[error("value iteration did not reach residual {tol} within {sweeps} sweeps (last {residual})")]
    NotConverged { tol: f64, sweeps: usize, residual: f64 },
    #[error("state {0:?} is outside the Q-table")]
    UnknownState(Vec<f64>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("expert mean return {best:.1} below bar {bar:.1}; best checkpoint kept at {path}")]
    BelowBar { best: f64, bar: f64, path: String },
}

/// Anything that maps a state to one value per action.
pub trait QFunction: Send + Sync {
    fn num_actions(&self) -> usize;
    fn q_values(&self, s: &StateVector) -> Vec<f64>;
}

/// Anything that maps a state to an action distribution.
pub trait Policy: Send + Sync {
    fn num_actions(&self) -> usize;
    fn distribution(&self, s: &StateVector) -> ActionDistribution<f64>;
}

/// Greedy policy over a Q-function mixed with `epsilon` uniform mass.
pub struct EpsilonGreedy<'a> {
    pub q: &'a dyn QFunction,
    pub epsilon: f64,
}

impl<'a> EpsilonGreedy<'a> {
    pub fn new(q: &'a dyn QFunction, epsilon: f64) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(AgentError::InvalidEpsilon(epsilon));
        }
        Ok(Self { q, epsilon })
    }

    pub fn greedy(q: &'a dyn QFunction) -> Self {
        Self { q, epsilon: 0.0 }
    }
}

impl Policy for EpsilonGreedy<'_> {
    fn num_actions(&self) -> usize {
        self.q.num_actions()
    }

    fn distribution(&self, s: &StateVector) -> ActionDistribution<f64> {
        ActionDistribution::epsilon_greedy(&self.q.q_values(s), self.epsilon)
    }
}

/// `act`: epsilon-greedy distribution of a Q-function at `s`.
pub fn act(q: &dyn QFunction, s: &StateVector, epsilon: f64) -> Result<ActionDistribution<f64>, AgentError> {
    Ok(EpsilonGreedy::new(q, epsilon)?.distribution(s))
}

/// A student that learns from each executed transition.
pub trait Learner: QFunction {
    fn observe(&mut self, tr: Transition, rng: &mut dyn rand::RngCore) -> Result<(), AgentError>;
    /// Digest of the learner's parameters.
    fn fingerprint(&self) -> u64;
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
