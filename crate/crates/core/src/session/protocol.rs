//! JSON messages exchanged with cockpit clients, one per text frame.

use serde::{Deserialize, Serialize};

use super::SessionConfig;
use crate::env::{EnvKind, TerminalKind};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Open { cfg: SessionConfig },
    Input { action: usize, ts: u64 },
    Reset,
    Close,
    /// Ask for the learnability grid over two named state dimensions.
    Heatmap {
        #[serde(default)]
        axes: Option<[String; 2]>,
    },
}

/// Telemetry for one simulation tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub state: Vec<f64>,
    pub executed: usize,
    pub human: usize,
    pub alpha_eff: f64,
    pub phi: f64,
    pub reward: f64,
    pub terminal: TerminalKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Opened {
        version: u32,
        session_id: String,
        env: EnvKind,
        dim_names: Vec<String>,
        num_actions: usize,
        tick_hz: f64,
    },
    Frame(Frame),
    Heatmap { axes: [usize; 2], grid: Vec<Vec<f64>> },
    Error { msg: String },
    Closed,
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|e| format!(r#"{{"type":"error","msg":"encode: {e}"}}"#))
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("bad message: {e}"))
    }
}
