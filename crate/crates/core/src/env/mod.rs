//! Episodic environments with snapshot/restore for planner rollouts.

mod config;
mod grid;
mod lander;
mod log;

pub use config::{EnvConfig, GridTrackConfig, MiniLanderConfig};
pub use grid::{GridAction, GridTrack};
pub use lander::{LanderAction, MiniLander};
pub use log::TrajectoryLogger;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Continuous environment state of fixed per-environment dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Discrete action index in `[0, A)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    #[default]
    None,
    Success,
    Crash,
    Timeout,
}

impl TerminalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::None => "none",
            TerminalKind::Success => "success",
            TerminalKind::Crash => "crash",
            TerminalKind::Timeout => "timeout",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != TerminalKind::None
    }
}

impl std::str::FromStr for TerminalKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "success" => Ok(Self::Success),
            "crash" => Ok(Self::Crash),
            "timeout" => Ok(Self::Timeout),
            other => Err(format!("unknown terminal kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateVector,
    pub reward: f64,
    pub terminal: bool,
    pub terminal_kind: TerminalKind,
}

impl StepOutcome {
    pub(crate) fn new(next_state: StateVector, reward: f64, kind: TerminalKind) -> Self {
        Self { next_state, reward, terminal: kind.is_terminal(), terminal_kind: kind }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[serde(alias = "grid")]
    GridTrack,
    #[serde(alias = "lander")]
    MiniLander,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::GridTrack => "gridtrack",
            EnvKind::MiniLander => "minilander",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gridtrack" | "grid" => Ok(Self::GridTrack),
            "minilander" | "lander" => Ok(Self::MiniLander),
            other => Err(format!("unknown environment `{other}` (gridtrack or minilander)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a terminal episode (tick {tick}); reset first")]
    SteppedTerminal { tick: usize },
    #[error("action {action} outside [0, {num_actions})")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("snapshot belongs to a different environment configuration ({expected} vs {found})")]
    ConfigMismatch { expected: String, found: String },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

/// Opaque copy of a simulator's full state, tagged with the configuration it came from.
#[derive(Clone, Debug)]
pub struct EnvSnapshot {
    pub(crate) config_id: u64,
    pub(crate) kind: EnvKind,
    pub(crate) inner: SnapshotInner,
}

#[derive(Clone, Debug)]
pub(crate) enum SnapshotInner {
    Grid(grid::GridSim),
    Lander(Box<lander::LanderSim>),
}

impl EnvSnapshot {
    pub fn kind(&self) -> EnvKind {
        self.kind
    }
}

pub(crate) fn check_snapshot(snap: &EnvSnapshot, kind: EnvKind, config_id: u64) -> Result<(), EnvError> {
    if snap.kind != kind || snap.config_id != config_id {
        return Err(EnvError::ConfigMismatch {
            expected: format!("{}#{config_id:016x}", kind.as_str()),
            found: format!("{}#{:016x}", snap.kind.as_str(), snap.config_id),
        });
    }
    Ok(())
}

/// Common interface of the simulated tasks.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Names of the state dimensions, in order.
    fn dim_names(&self) -> &'static [&'static str];
    /// Deterministic initial state for `(config, seed)`; clock set to 0.
    fn reset(&mut self, seed: u64) -> StateVector;
    fn step(&mut self, action: ActionId) -> Result<StepOutcome, EnvError>;
    fn state(&self) -> StateVector;
    fn tick(&self) -> usize;
    fn is_terminal(&self) -> bool;
    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError>;
    fn boxed_clone(&self) -> Box<dyn Environment>;
    /// Finite view for exact dynamic programming, when the task has one.
    fn as_enumerable(&self) -> Option<&dyn EnumerableMdp> {
        None
    }
}

/// Result of one deterministic transition in an enumerable MDP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdpStep {
    pub reward: f64,
    /// `None` when the transition ends the episode.
    pub next: Option<usize>,
}

/// Finite, deterministic MDP over indexed states.
pub trait EnumerableMdp {
    /// Size of the state index space (some indices may be unused).
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Sizes of the integer-valued state dimensions; `state_index` is the
    /// mixed-radix number over them with the last dimension fastest.
    fn radices(&self) -> Vec<usize>;
    /// Whether `index` is a reachable non-terminal state.
    fn is_live(&self, index: usize) -> bool;
    fn transition(&self, index: usize, action: usize) -> MdpStep;
    fn state_index(&self, s: &StateVector) -> Option<usize>;
    fn state_at(&self, index: usize) -> StateVector;
}

/// Builds the environment described by a configuration.
pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match cfg {
        EnvConfig::GridTrack(c) => Box::new(GridTrack::new(c.clone())?),
        EnvConfig::MiniLander(c) => Box::new(MiniLander::new(c.clone())?),
    })
}

pub(crate) fn config_fingerprint<T: Serialize>(cfg: &T) -> u64 {
    let text = serde_json::to_string(cfg).unwrap_or_default();
    crate::rng::derive_seed(0, &text, 0)
}
