//! Trajectory-scoring action selection.
//!
//! From a snapshot of the live environment, `B` rollouts of up to `T` steps are
//! sampled under the shared (blended) policy. Each rollout is scored by
//! `J = w1 * mean learnability of its visited states + w2 * normalised return`,
//! and the first action of the best rollout is executed.

mod trajectory;

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::ActionDistribution;
use crate::assist::{adaptive_alpha, blend, AssistError, AssistanceLevel};
use crate::env::{ActionId, EnvError, EnvSnapshot, Environment, StateVector};
use crate::rng::derive_seed;
use crate::zpd::Learnability;

pub use trajectory::{Step, Trajectory};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("beam size and horizon must be at least 1 (got B={beam}, T={horizon})")]
    EmptyBeam { beam: usize, horizon: usize },
    #[error("replan interval must be at least 1")]
    ZeroReplanInterval,
    #[error("exhaustive enumeration of {0} candidates is too large")]
    TooManyCandidates(u128),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Assist(#[from] AssistError),
    #[error("decision log: {0}")]
    Log(#[from] std::io::Error),
}

/// How candidate trajectories are generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Candidates {
    /// `beam_size` rollouts sampled from the shared policy.
    #[default]
    Sampled,
    /// Every length-`horizon` action sequence, in lexicographic order. Only for small problems.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub beam_size: usize,
    pub horizon: usize,
    pub w1: f64,
    pub w2: f64,
    /// Steps between beam searches.
    pub replan_interval: usize,
    pub candidates: Candidates,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { beam_size: 3, horizon: 3, w1: 0.5, w2: 0.5, replan_interval: 1, candidates: Candidates::Sampled }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.beam_size == 0 || self.horizon == 0 {
            return Err(PlannerError::EmptyBeam { beam: self.beam_size, horizon: self.horizon });
        }
        if self.replan_interval == 0 {
            return Err(PlannerError::ZeroReplanInterval);
        }
        Ok(())
    }
}

/// Scales returns by the largest absolute return seen so far, never by less than 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    max_abs: f64,
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        Self { max_abs: 1.0 }
    }
}

impl RewardNormalizer {
    pub fn observe(&mut self, ret: f64) {
        if ret.is_finite() {
            self.max_abs = self.max_abs.max(ret.abs());
        }
    }

    pub fn normalize(&self, ret: f64) -> f64 {
        ret / self.max_abs
    }

    pub fn scale(&self) -> f64 {
        self.max_abs
    }
}

/// Samples an action distribution for a state.
pub type PolicyFn<'a> = dyn Fn(&StateVector) -> ActionDistribution<f64> + 'a;

/// Mean learnability over the visited states (zero for an empty trajectory).
pub fn phi_mean(tau: &Trajectory, phi: &dyn Learnability) -> f64 {
    if tau.is_empty() {
        return 0.0;
    }
    tau.states().map(|s| phi.phi(s)).sum::<f64>() / tau.len() as f64
}

/// `w1 * phi_mean + w2 * normalised return`.
pub fn score(tau: &Trajectory, phi: &dyn Learnability, cfg: &PlannerConfig, norm: &RewardNormalizer) -> f64 {
    cfg.w1 * phi_mean(tau, phi) + cfg.w2 * norm.normalize(tau.total_return())
}

/// Index of the highest score, earliest on ties.
pub fn select(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &j) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= j => {}
            _ if j.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

fn rollout(
    env: &mut dyn Environment,
    origin: &EnvSnapshot,
    horizon: usize,
    mut next_action: impl FnMut(&StateVector, usize) -> ActionId,
) -> Result<Trajectory, EnvError> {
    env.restore(origin)?;
    let mut s = env.state();
    let mut tau = Trajectory::new();
    for k in 0..horizon {
        let a = next_action(&s, k);
        let out = env.step(a)?;
        tau.push(s, a, out.reward);
        s = out.next_state;
        if out.terminal {
            tau.terminal_kind = out.terminal_kind;
            break;
        }
    }
    Ok(tau)
}

/// `B` rollouts of up to `T` steps from `origin` under `shared`. Beam `b` draws
/// from its own stream seeded by `(seed, b)`.
pub fn beam_search(
    shared: &PolicyFn<'_>,
    env: &mut dyn Environment,
    origin: &EnvSnapshot,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<Vec<Trajectory>, PlannerError> {
    cfg.validate()?;
    match cfg.candidates {
        Candidates::Sampled => (0..cfg.beam_size)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "beam", b as u64));
                Ok(rollout(env, origin, cfg.horizon, |s, _| shared(s).sample(&mut rng))?)
            })
            .collect(),
        Candidates::Exhaustive => exhaustive(env, origin, cfg.horizon),
    }
}

/// Every action sequence of length `horizon`, first action most significant.
fn exhaustive(env: &mut dyn Environment, origin: &EnvSnapshot, horizon: usize) -> Result<Vec<Trajectory>, PlannerError> {
    let n = env.num_actions();
    let total = (n as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if total > 1 << 16 {
        return Err(PlannerError::TooManyCandidates(total));
    }
    (0..total as usize)
        .map(|code| {
            let digit = |k: usize| ActionId(code / n.pow((horizon - 1 - k) as u32) % n);
            Ok(rollout(env, origin, horizon, |_, k| digit(k))?)
        })
        .collect()
}

/// One candidate in a decision record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub phi_mean: f64,
}

/// One replan, as written to the decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: usize,
    pub alpha_eff: f64,
    pub beam: Vec<CandidateRecord>,
    pub chosen_index: usize,
}

/// Outcome of one planner step.
#[derive(Clone, Debug, PartialEq)]
pub struct PsnDecision {
    pub action: ActionId,
    pub phi: f64,
    pub alpha_eff: AssistanceLevel,
    /// Set when a fresh beam search ran this step.
    pub replanned: bool,
    /// Set when beam search failed and a plain blended sample was used.
    pub fallback: bool,
}

/// Everything the planner needs about the policies at the current step.
pub struct PsnInputs<'a> {
    pub student: &'a PolicyFn<'a>,
    pub expert: &'a PolicyFn<'a>,
    pub phi: &'a dyn Learnability,
    pub alpha: AssistanceLevel,
    /// Scale assistance by `1 - phi(s)`; when off, `alpha` is used as-is.
    pub taper: bool,
}

struct Commitment {
    plan: Trajectory,
    alpha_eff: AssistanceLevel,
    offset: usize,
}

/// Stateful action selector: keeps the return normaliser, the committed plan
/// between replans, a scratch copy of the environment and an optional decision log.
pub struct Planner {
    cfg: PlannerConfig,
    normalizer: RewardNormalizer,
    scratch: Option<Box<dyn Environment>>,
    committed: Option<Commitment>,
    log: Option<Box<dyn Write + Send>>,
    fallbacks: usize,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, PlannerError> {
        cfg.validate()?;
        Ok(Self { cfg, normalizer: RewardNormalizer::default(), scratch: None, committed: None, log: None, fallbacks: 0 })
    }

    /// Writes one JSON line per replan to `out`.
    pub fn with_log(mut self, out: Box<dyn Write + Send>) -> Self {
        self.log = Some(out);
        self
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Drops any committed plan; call at episode boundaries.
    pub fn reset_episode(&mut self) {
        self.committed = None;
    }

    /// Picks the action to execute in `env`'s current state.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        env: &dyn Environment,
        inputs: &PsnInputs<'_>,
        rng: &mut R,
    ) -> Result<PsnDecision, PlannerError> {
        let s = env.state();
        let phi = inputs.phi.phi(&s).clamp(0.0, 1.0);

        if let Some(c) = self.committed.as_mut() {
            if c.offset < self.cfg.replan_interval {
                let alpha_eff = c.alpha_eff;
                let planned = c.plan.steps.get(c.offset).filter(|st| st.state == s).map(|st| st.action);
                c.offset += 1;
                let action = match planned {
                    Some(a) => a,
                    None => shared_dist(inputs, alpha_eff, &s)?.sample(rng),
                };
                return Ok(PsnDecision { action, phi, alpha_eff, replanned: false, fallback: false });
            }
        }

        let alpha_eff = if inputs.taper { adaptive_alpha(inputs.alpha, phi)? } else { inputs.alpha };
        let seed = rng.next_u64();
        match self.plan(env, inputs, alpha_eff, seed) {
            Ok((plan, record)) => {
                if let Some(out) = self.log.as_mut() {
                    serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::from)?;
                    out.write_all(b"\n")?;
                }
                let action = plan.first_action().expect("rollouts from a live state are non-empty");
                self.committed = Some(Commitment { plan, alpha_eff, offset: 1 });
                Ok(PsnDecision { action, phi, alpha_eff, replanned: true, fallback: false })
            }
            Err(e) => {
                warn!("beam search failed at t={}: {e}; falling back to the blended policy", env.tick());
                self.fallbacks += 1;
                self.committed = None;
                let action = shared_dist(inputs, alpha_eff, &s)?.sample(rng);
                Ok(PsnDecision { action, phi, alpha_eff, replanned: false, fallback: true })
            }
        }
    }

    fn plan(
        &mut self,
        env: &dyn Environment,
        inputs: &PsnInputs<'_>,
        alpha_eff: AssistanceLevel,
        seed: u64,
    ) -> Result<(Trajectory, DecisionRecord), PlannerError> {
        let origin = env.snapshot();
        let scratch = match &mut self.scratch {
            Some(sc) if sc.kind() == env.kind() => sc,
            slot => slot.insert(env.boxed_clone()),
        };
        let shared = |st: &StateVector| {
            blend(&(inputs.expert)(st), &(inputs.student)(st), alpha_eff)
                .unwrap_or_else(|_| (inputs.student)(st))
        };
        let beam = beam_search(&shared, scratch.as_mut(), &origin, &self.cfg, seed)?;
        for tau in &beam {
            self.normalizer.observe(tau.total_return());
        }
        let scored: Vec<CandidateRecord> = beam
            .iter()
            .map(|tau| CandidateRecord {
                j: score(tau, inputs.phi, &self.cfg, &self.normalizer),
                ret: tau.total_return(),
                phi_mean: phi_mean(tau, inputs.phi),
            })
            .collect();
        let js: Vec<f64> = scored.iter().map(|c| c.j).collect();
        let chosen = select(&js).unwrap_or(0);
        let record = DecisionRecord { t: env.tick(), alpha_eff: alpha_eff.value(), beam: scored, chosen_index: chosen };
        let plan = beam.into_iter().nth(chosen).expect("beam is non-empty");
        Ok((plan, record))
    }
}

fn shared_dist(
    inputs: &PsnInputs<'_>,
    alpha_eff: AssistanceLevel,
    s: &StateVector,
) -> Result<ActionDistribution<f64>, PlannerError> {
    Ok(blend(&(inputs.expert)(s), &(inputs.student)(s), alpha_eff)?)
}

/// One-shot planner step with a fresh normaliser and no committed plan.
pub fn psn_action<R: Rng + ?Sized>(
    env: &dyn Environment,
    inputs: &PsnInputs<'_>,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<PsnDecision, PlannerError> {
    Planner::new(cfg.clone())?.act(env, inputs, rng)
}
