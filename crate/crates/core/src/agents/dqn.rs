//! Double-DQN learner over a small feed-forward Q-network.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, AgentError, Learner, QFunction, ReplayBuffer, Transition};
use crate::env::StateVector;
use crate::nn::{Adam, Gradients, Mlp};
use crate::NetReal;

/// Q-network with a fixed per-dimension input scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub mlp: Mlp<NetReal>,
    /// Each state coordinate is divided by its scale before the forward pass.
    pub input_scale: Vec<NetReal>,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(input_scale: Vec<NetReal>, hidden: &[usize], num_actions: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input_scale.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(num_actions);
        Self { mlp: Mlp::new(&sizes, rng), input_scale }
    }

    pub fn features(&self, s: &[f64]) -> Vec<NetReal> {
        s.iter().zip(&self.input_scale).map(|(&v, &k)| v as NetReal / k).collect()
    }

    pub fn forward(&self, s: &[f64]) -> Vec<NetReal> {
        self.mlp.forward(&self.features(s))
    }
}

impl QFunction for QNet {
    fn num_actions(&self) -> usize {
        self.mlp.output_dim()
    }

    fn q_values(&self, s: &StateVector) -> Vec<f64> {
        self.forward(s).into_iter().map(f64::from).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync: usize,
    /// Transitions stored before the first update.
    pub warmup: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub huber_delta: f64,
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            learning_rate: 0.001,
            gamma: 0.99,
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync: 500,
            warmup: 1_000,
            train_every: 1,
            huber_delta: 1.0,
            max_grad_norm: 10.0,
        }
    }
}

/// Double-Q targets: the online values select the next action, the target
/// values evaluate it. Terminal transitions use the bare reward.
pub fn double_q_targets(
    online_next: &[Vec<NetReal>],
    target_next: &[Vec<NetReal>],
    rewards: &[NetReal],
    terminal: &[bool],
    gamma: NetReal,
) -> Vec<NetReal> {
    rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if terminal[i] {
                return r;
            }
            let row: Vec<f64> = online_next[i].iter().map(|&v| v as f64).collect();
            let chosen = argmax(&row);
            r + gamma * target_next[i][chosen]
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct DqnLearner {
    pub online: QNet,
    pub target: QNet,
    pub cfg: DqnConfig,
    optimizer: Adam<NetReal>,
    grads: Gradients<NetReal>,
    replay: ReplayBuffer,
    steps: usize,
    updates: usize,
    sample_rng: ChaCha8Rng,
}

impl DqnLearner {
    pub fn new(input_scale: Vec<NetReal>, num_actions: usize, cfg: DqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNet::new(input_scale, &cfg.hidden, num_actions, &mut rng);
        let optimizer = Adam::new(&online.mlp, cfg.learning_rate as NetReal);
        let grads = Gradients::zeros_like(&online.mlp);
        let replay = ReplayBuffer::new(cfg.replay_capacity);
        Self {
            target: online.clone(),
            online,
            cfg,
            optimizer,
            grads,
            replay,
            steps: 0,
            updates: 0,
            sample_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// One gradient step on a uniformly sampled minibatch.
    pub fn train_step(&mut self) -> Result<(), AgentError> {
        let batch: Vec<Transition> =
            self.replay.sample(self.cfg.batch_size, &mut self.sample_rng).into_iter().cloned().collect();
        if batch.is_empty() {
            return Ok(());
        }
        let online_next: Vec<Vec<NetReal>> = batch.iter().map(|t| self.online.forward(&t.next_state)).collect();
        let target_next: Vec<Vec<NetReal>> = batch.iter().map(|t| self.target.forward(&t.next_state)).collect();
        let rewards: Vec<NetReal> = batch.iter().map(|t| t.reward as NetReal).collect();
        let terminal: Vec<bool> = batch.iter().map(|t| t.terminal).collect();
        let targets = double_q_targets(&online_next, &target_next, &rewards, &terminal, self.cfg.gamma as NetReal);
        if let Some((i, y)) = targets.iter().enumerate().find(|(_, y)| !y.is_finite()) {
            return Err(AgentError::NonFiniteTarget { target: *y as f64, action: batch[i].action.0 });
        }

        self.grads.clear();
        let delta = self.cfg.huber_delta as NetReal;
        for (t, &y) in batch.iter().zip(&targets) {
            let a = t.action.0;
            let x = self.online.features(&t.state);
            self.online.mlp.backward(
                &x,
                |q| {
                    let mut g = vec![0.0; q.len()];
                    g[a] = (q[a] - y).clamp(-delta, delta);
                    g
                },
                &mut self.grads,
            );
        }
        self.grads.scale(1.0 / batch.len() as NetReal);
        if !self.grads.is_finite() {
            return Err(AgentError::NonFiniteGradient);
        }
        let norm = self.grads.norm();
        let max_norm = self.cfg.max_grad_norm as NetReal;
        if norm > max_norm {
            self.grads.scale(max_norm / norm);
        }
        self.optimizer.step(&mut self.online.mlp, &self.grads);
        self.updates += 1;
        if self.updates % self.cfg.target_sync.max(1) == 0 {
            self.target = self.online.clone();
        }
        Ok(())
    }
}

impl QFunction for DqnLearner {
    fn num_actions(&self) -> usize {
        self.online.num_actions()
    }

    fn q_values(&self, s: &StateVector) -> Vec<f64> {
        self.online.q_values(s)
    }
}

impl Learner for DqnLearner {
    fn observe(&mut self, tr: Transition, _rng: &mut dyn RngCore) -> Result<(), AgentError> {
        self.replay.push(tr);
        self.steps += 1;
        if self.replay.len() >= self.cfg.warmup.max(1) && self.steps % self.cfg.train_every.max(1) == 0 {
            self.train_step()?;
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        self.online.mlp.fingerprint()
    }
}
