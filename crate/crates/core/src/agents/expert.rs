//! Frozen expert construction: exact DP on GridTrack, double-DQN on MiniLander.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    value_iteration_env, AgentError, ActionDistribution, Checkpoint, DqnConfig, DqnLearner, Learner, QFunction,
    Transition,
};
use crate::env::{EnvConfig, EnvKind, Environment, TerminalKind};
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertBudget {
    pub max_episodes: usize,
    /// Training episodes between greedy evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Mean greedy return the expert must exceed.
    pub bar: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub seed: u64,
    pub gamma: f64,
    pub dqn: DqnConfig,
}

impl Default for ExpertBudget {
    fn default() -> Self {
        Self {
            max_episodes: 1000,
            eval_every: 25,
            eval_episodes: 20,
            bar: 200.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 40_000,
            seed: 0,
            gamma: 0.99,
            dqn: DqnConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpertReport {
    pub env: EnvKind,
    pub episodes: usize,
    pub best_mean_return: f64,
    pub checkpoint: PathBuf,
}

/// Runs the greedy policy of `q` for `episodes` episodes; returns per-episode returns.
/// Episode `i` resets with `derive_seed(seed, "expert-eval", i)`.
pub fn evaluate_greedy(
    q: &dyn QFunction,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(f64, TerminalKind)>, AgentError> {
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut s = env.reset(derive_seed(seed, "expert-eval", i as u64));
        let mut ret = 0.0;
        loop {
            let a = ActionDistribution::<f64>::epsilon_greedy(&q.q_values(&s), 0.0).argmax();
            let step = env.step(a)?;
            ret += step.reward;
            s = step.next_state;
            if step.terminal {
                out.push((ret, step.terminal_kind));
                break;
            }
        }
    }
    Ok(out)
}

/// Loads a frozen expert from `checkpoint`, or solves the task exactly when no
/// checkpoint is given and the task is enumerable.
pub fn load_expert(env_cfg: &EnvConfig, checkpoint: Option<&Path>, gamma: f64) -> Result<Arc<dyn QFunction>, AgentError> {
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(path)?;
        if ck.env != env_cfg.kind() {
            return Err(AgentError::Checkpoint(format!(
                "{} holds a {} expert, expected {}",
                path.display(),
                ck.env.as_str(),
                env_cfg.kind().as_str()
            )));
        }
        return Ok(Arc::from(ck.q_function()?));
    }
    let env = crate::env::make_env(env_cfg)?;
    if env.as_enumerable().is_none() {
        return Err(AgentError::Checkpoint(format!("{} needs an expert checkpoint", env_cfg.kind().as_str())));
    }
    let (table, report) = value_iteration_env::<f64>(env.as_ref(), gamma, 1e-10)?;
    info!("expert from value iteration in {} sweeps", report.sweeps);
    Ok(Arc::new(table))
}

fn mean_return(results: &[(f64, TerminalKind)]) -> f64 {
    results.iter().map(|r| r.0).sum::<f64>() / results.len().max(1) as f64
}

/// Input scaling for the lander network, roughly unit-range features.
pub(crate) fn lander_input_scale(env: &EnvConfig) -> Vec<f32> {
    match env {
        EnvConfig::MiniLander(c) => vec![
            c.world_half_width as f32,
            c.spawn_altitude as f32,
            c.velocity_scale as f32,
            c.velocity_scale as f32,
            c.crash_tilt as f32,
            1.0,
            1.0,
            1.0,
        ],
        EnvConfig::GridTrack(_) => vec![1.0; 4],
    }
}

/// Builds and persists a frozen expert. Fails with [`AgentError::BelowBar`]
/// (after saving the best checkpoint) when the budget runs out first.
pub fn train_expert(env_cfg: &EnvConfig, budget: &ExpertBudget, out: &Path) -> Result<ExpertReport, AgentError> {
    let mut env = crate::env::make_env(env_cfg)?;
    match env_cfg {
        EnvConfig::GridTrack(_) => {
            let (table, report) = value_iteration_env::<f64>(env.as_ref(), budget.gamma, 1e-10)?;
            let results = evaluate_greedy(&table, env.as_mut(), budget.eval_episodes.max(1), budget.seed)?;
            let mean = mean_return(&results);
            let mut ck = Checkpoint::tabular(EnvKind::GridTrack, &table);
            ck.mean_return = Some(mean);
            ck.save(out)?;
            info!("value iteration converged in {} sweeps, greedy return {mean:.2}", report.sweeps);
            Ok(ExpertReport { env: EnvKind::GridTrack, episodes: 0, best_mean_return: mean, checkpoint: out.to_path_buf() })
        }
        EnvConfig::MiniLander(_) => train_lander_expert(env_cfg, env.as_mut(), budget, out),
    }
}

fn train_lander_expert(
    env_cfg: &EnvConfig,
    env: &mut dyn Environment,
    budget: &ExpertBudget,
    out: &Path,
) -> Result<ExpertReport, AgentError> {
    let mut dqn_cfg = budget.dqn.clone();
    dqn_cfg.gamma = budget.gamma;
    let mut learner = DqnLearner::new(lander_input_scale(env_cfg), env.num_actions(), dqn_cfg, budget.seed);
    let mut eval_env = env.boxed_clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(budget.seed, "expert-explore", 0));
    let mut best = f64::NEG_INFINITY;
    let mut steps = 0usize;
    let mut episodes = 0;
    for ep in 0..budget.max_episodes {
        episodes = ep + 1;
        let mut s = env.reset(derive_seed(budget.seed, "expert-train", ep as u64));
        loop {
            let frac = (steps as f64 / budget.epsilon_decay_steps.max(1) as f64).min(1.0);
            let eps = budget.epsilon_start + (budget.epsilon_end - budget.epsilon_start) * frac;
            let a = ActionDistribution::<f64>::epsilon_greedy(&learner.q_values(&s), eps).sample(&mut rng);
            let step = env.step(a)?;
            steps += 1;
            let done = step.terminal;
            let tr = Transition {
                state: s,
                action: a,
                reward: step.reward,
                next_state: step.next_state.clone(),
                terminal: matches!(step.terminal_kind, TerminalKind::Crash | TerminalKind::Success),
            };
            match learner.observe(tr, &mut rng) {
                Ok(()) => {}
                Err(e @ (AgentError::NonFiniteTarget { .. } | AgentError::NonFiniteGradient)) => {
                    log::warn!("skipped update: {e}");
                }
                Err(e) => return Err(e),
            }
            s = step.next_state;
            if done {
                break;
            }
        }
        if (ep + 1) % budget.eval_every.max(1) == 0 {
            let results = evaluate_greedy(&learner.online, eval_env.as_mut(), budget.eval_episodes, budget.seed)?;
            let mean = mean_return(&results);
            info!("expert episode {} steps {steps} greedy mean {mean:.1}", ep + 1);
            if mean > best {
                best = mean;
                let mut ck = Checkpoint::network(EnvKind::MiniLander, &learner.online);
                ck.mean_return = Some(mean);
                ck.save(out)?;
            }
            if best > budget.bar {
                break;
            }
        }
    }
    if best > budget.bar {
        Ok(ExpertReport { env: EnvKind::MiniLander, episodes, best_mean_return: best, checkpoint: out.to_path_buf() })
    } else {
        if !best.is_finite() {
            // never evaluated; keep whatever the network has become
            Checkpoint::network(EnvKind::MiniLander, &learner.online).save(out)?;
        }
        Err(AgentError::BelowBar { best, bar: budget.bar, path: out.display().to_string() })
    }
}
