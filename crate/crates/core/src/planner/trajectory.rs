use serde::{Deserialize, Serialize};

use crate::env::{ActionId, StateVector, TerminalKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: StateVector,
    pub action: ActionId,
    pub reward: f64,
}

/// Ordered `(state, action, reward)` steps; `state` is the state the action was taken in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Outcome of the last step; `None` while the rollout is still live.
    pub terminal_kind: TerminalKind,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, state: StateVector, action: ActionId, reward: f64) {
        self.steps.push(Step { state, action, reward });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn first_action(&self) -> Option<ActionId> {
        self.steps.first().map(|s| s.action)
    }

    pub fn states(&self) -> impl Iterator<Item = &StateVector> {
        self.steps.iter().map(|s| &s.state)
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Ended in a crash, success or timeout rather than by reaching the horizon.
    pub fn truncated_by_terminal(&self) -> bool {
        self.terminal_kind.is_terminal()
    }
}
