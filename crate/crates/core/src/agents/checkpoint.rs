//! Versioned JSON checkpoints for frozen Q-functions.
//!
//! ```json
//! {"format": "psn-checkpoint", "version": 1, "env": "gridtrack", "mean_return": 8.1,
//!  "body": {"kind": "tabular", "radices": [12, 8, 3, 4], "num_actions": 4, "values": [...]}}
//! {"format": "psn-checkpoint", "version": 1, "env": "minilander", "mean_return": 231.4,
//!  "body": {"kind": "network", "input_scale": [...], "network": {"layers": [
//!     {"inputs": 8, "outputs": 128, "weights": [...], "bias": [...]}, ...]}}}
//! ```
//!
//! `values` is row-major `[state][action]`; network weights are row-major
//! `[outputs][inputs]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentError, QFunction, QNet, QTable, TableIndex};
use crate::env::EnvKind;
use crate::nn::{Mlp, MlpRecord};

pub const CHECKPOINT_FORMAT: &str = "psn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_return: Option<f64>,
    pub body: CheckpointBody,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointBody {
    Tabular { radices: Vec<usize>, num_actions: usize, values: Vec<f64> },
    Network { input_scale: Vec<f64>, network: MlpRecord },
}

impl Checkpoint {
    pub fn tabular(env: EnvKind, table: &QTable<f64>) -> Self {
        Self::wrap(
            env,
            CheckpointBody::Tabular {
                radices: table.index.radices.clone(),
                num_actions: table.num_actions,
                values: table.values.clone(),
            },
        )
    }

    pub fn network(env: EnvKind, net: &QNet) -> Self {
        Self::wrap(
            env,
            CheckpointBody::Network {
                input_scale: net.input_scale.iter().map(|&v| v as f64).collect(),
                network: net.mlp.to_record(),
            },
        )
    }

    fn wrap(env: EnvKind, body: CheckpointBody) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, env, mean_return: None, body }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string(self).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(AgentError::Checkpoint(format!("unexpected format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    /// Rebuilds the frozen Q-function.
    pub fn q_function(&self) -> Result<Box<dyn QFunction>, AgentError> {
        match &self.body {
            CheckpointBody::Tabular { radices, num_actions, values } => {
                let index = TableIndex::new(radices.clone());
                if index.len() * num_actions != values.len() {
                    return Err(AgentError::Checkpoint("table size does not match radices".into()));
                }
                Ok(Box::new(QTable { index, num_actions: *num_actions, values: values.clone() }))
            }
            CheckpointBody::Network { input_scale, network } => {
                let mlp = Mlp::from_record(network).ok_or_else(|| AgentError::Checkpoint("inconsistent layer shapes".into()))?;
                if mlp.input_dim() != input_scale.len() {
                    return Err(AgentError::Checkpoint("input_scale length does not match the network".into()));
                }
                Ok(Box::new(QNet { mlp, input_scale: input_scale.iter().map(|&v| v as f32).collect() }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StateVector;
    use rand::SeedableRng;

    #[test]
    fn network_checkpoint_reloads_identically() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let net = QNet::new(vec![10.0, 10.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0], &[8, 8], 4, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expert.json");
        Checkpoint::network(EnvKind::MiniLander, &net).save(&path).unwrap();
        let q = Checkpoint::load(&path).unwrap().q_function().unwrap();
        let s = StateVector(vec![1.0, 5.0, 0.3, -0.2, 0.1, 0.0, 0.0, 1.0]);
        assert_eq!(q.q_values(&s), net.q_values(&s));
    }

    #[test]
    fn rejects_wrong_version_and_garbage() {
        let table = QTable::<f64>::zeros(TableIndex::new(vec![2]), 2);
        let mut ck = Checkpoint::tabular(EnvKind::GridTrack, &table);
        ck.version = 9;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
        assert!(Checkpoint::load(Path::new("/nonexistent/expert.json")).is_err());
    }
}
