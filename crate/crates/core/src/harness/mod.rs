//! Experiment engine: trains a student under an assistance strategy, evaluates it
//! assisted and unassisted at a fixed cadence, refits the learnability estimator
//! from the evaluation rollouts, and records every episode.
//!
//! Output layout per run: `<output>/<strategy>/<seed>/records.csv`, plus
//! `checkpoints/` and `heatmaps/` next to it when artifacts are on.

mod config;
mod record;
mod summary;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{
    self, argmax, lander_input_scale, ActionDistribution, AgentError, Checkpoint, DqnLearner, Learner,
    QFunction, QTable, TabularLearner, Transition,
};
use crate::assist::{blend, qgap_override, AssistError, Strategy};
use crate::env::{make_env, EnvError, Environment, StateVector, TerminalKind};
use crate::planner::{Planner, PlannerError, PsnInputs, Trajectory};
use crate::rng::{derive_seed, substream, StreamRng};
use crate::zpd::{heatmap_grid, label_rollouts, AxisSpec, ConstantPhi, Learnability, Source, ZpdCheckpoint, ZpdError, ZpdEstimator};
use crate::PhiEstimator;

pub use config::{parse_seeds, ExperimentConfig, StudentConfig, CONFIG_VERSION};
pub use record::{read_records, read_records_dir, ExperimentRecord, Mode, RecordWriter};
pub use summary::{format_summary, summarize, write_summary_csv, Estimate, StrategySummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("no records to summarize")]
    NoRecords,
    #[error("student parameters changed during evaluation round {0}")]
    StudentMutated(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Zpd(#[from] ZpdError),
    #[error(transparent)]
    Assist(#[from] AssistError),
}

/// A student learner of either representation.
pub enum Student {
    Tabular(TabularLearner<f64>),
    Network(Box<DqnLearner>),
}

impl Student {
    pub fn new(cfg: &ExperimentConfig, env: &dyn Environment, seed: u64) -> Result<Self, HarnessError> {
        let s = &cfg.student;
        Ok(match env.as_enumerable() {
            Some(mdp) => Student::Tabular(TabularLearner::new(QTable::for_mdp(mdp), s.learning_rate, s.gamma)),
            None => {
                let mut dqn = s.dqn.clone();
                dqn.gamma = s.gamma;
                let init = derive_seed(seed, "student-init", 0);
                Student::Network(Box::new(DqnLearner::new(lander_input_scale(&cfg.env), env.num_actions(), dqn, init)))
            }
        })
    }

    pub fn learner(&self) -> &dyn Learner {
        match self {
            Student::Tabular(t) => t,
            Student::Network(n) => n.as_ref(),
        }
    }

    pub fn learner_mut(&mut self) -> &mut dyn Learner {
        match self {
            Student::Tabular(t) => t,
            Student::Network(n) => n.as_mut(),
        }
    }

    pub fn checkpoint(&self, env: crate::env::EnvKind) -> Checkpoint {
        match self {
            Student::Tabular(t) => Checkpoint::tabular(env, &t.table),
            Student::Network(n) => Checkpoint::network(env, &n.online),
        }
    }
}

/// Loads the frozen expert, or solves GridTrack exactly when no checkpoint is given.
pub fn load_expert(cfg: &ExperimentConfig) -> Result<Arc<dyn QFunction>, HarnessError> {
    Ok(agents::load_expert(&cfg.env, cfg.expert_checkpoint.as_deref(), cfg.student.gamma)?)
}

/// Records and per-seed failures of a run.
#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    /// Seeds that aborted, with the error. Their partial records are kept.
    pub failures: Vec<(u64, String)>,
}

/// Runs every seed of `cfg`, up to `cfg.workers` at a time.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let expert = load_expert(cfg)?;
    let run_dir = cfg.output.join(cfg.strategy.as_str());
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let per_seed: Vec<(Vec<ExperimentRecord>, Option<HarnessError>)> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed, expert.clone())).collect());
    let mut out = ExperimentOutcome::default();
    for (&seed, (records, err)) in cfg.seeds.iter().zip(per_seed) {
        out.records.extend(records);
        if let Some(e) = err {
            warn!("seed {seed} aborted: {e}");
            out.failures.push((seed, e.to_string()));
        }
    }
    Ok(out)
}

/// One seed; returns whatever records were produced and the error that stopped it, if any.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    expert: Arc<dyn QFunction>,
) -> (Vec<ExperimentRecord>, Option<HarnessError>) {
    let mut records = Vec::with_capacity(cfg.records_per_seed());
    let err = SeedRun::new(cfg, seed, expert).and_then(|mut run| run.execute(&mut records)).err();
    (records, err)
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    env: Box<dyn Environment>,
    student: Student,
    expert: Arc<dyn QFunction>,
    train_planner: Planner,
    eval_planner: Planner,
    phi: Option<PhiEstimator>,
    writer: RecordWriter<std::fs::File>,
}

/// Randomness for one episode.
struct EpisodeRngs<'r> {
    actions: &'r mut StreamRng,
    planner: &'r mut StreamRng,
    learning: Option<&'r mut StreamRng>,
}

impl<'a> SeedRun<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64, expert: Arc<dyn QFunction>) -> Result<Self, HarnessError> {
        let env = make_env(&cfg.env)?;
        let student = Student::new(cfg, env.as_ref(), seed)?;
        let writer = RecordWriter::create(&cfg.seed_dir(seed).join("records.csv"))?;
        Ok(Self {
            cfg,
            seed,
            env,
            student,
            expert,
            train_planner: Planner::new(cfg.planner.clone())?,
            eval_planner: Planner::new(cfg.planner.clone())?,
            phi: None,
            writer,
        })
    }

    fn execute(&mut self, records: &mut Vec<ExperimentRecord>) -> Result<(), HarnessError> {
        let cfg = self.cfg;
        let mut actions = substream(self.seed, "student", 0);
        let mut planner_rng = substream(self.seed, "planner", 0);
        let mut learning = substream(self.seed, "replay", 0);
        for e in 0..cfg.total_episodes {
            let eps = cfg.student.epsilon(e, cfg.total_episodes);
            let started = Instant::now();
            let rngs = EpisodeRngs { actions: &mut actions, planner: &mut planner_rng, learning: Some(&mut learning) };
            let tau = self.episode(cfg.strategy, eps, derive_seed(self.seed, "env", e as u64), rngs, true)?;
            self.record(records, e + 1, Mode::Train, &tau, started)?;
            if (e + 1) % cfg.eval_interval == 0 {
                self.evaluate(records, e + 1)?;
            }
        }
        if cfg.artifacts {
            let path = cfg.seed_dir(self.seed).join("checkpoints").join("student.json");
            self.student.checkpoint(cfg.env.kind()).save(&path)?;
        }
        Ok(())
    }

    fn evaluate(&mut self, records: &mut Vec<ExperimentRecord>, done: usize) -> Result<(), HarnessError> {
        let cfg = self.cfg;
        let round = done / cfg.eval_interval;
        let before = self.student.learner().fingerprint();
        let round_seed = derive_seed(self.seed, "eval", round as u64);
        let mut actions = substream(round_seed, "actions", 0);
        let mut planner_rng = substream(round_seed, "planner", 0);
        let mut by_mode = Vec::with_capacity(2);
        for (mode, strategy) in [(Mode::EvalAssisted, cfg.strategy), (Mode::EvalUnassisted, Strategy::None)] {
            let mut rollouts = Vec::with_capacity(cfg.eval_episodes);
            for i in 0..cfg.eval_episodes {
                let started = Instant::now();
                let rngs = EpisodeRngs { actions: &mut actions, planner: &mut planner_rng, learning: None };
                let tau = self.episode(strategy, 0.0, derive_seed(round_seed, "env", i as u64), rngs, false)?;
                self.record(records, done, mode, &tau, started)?;
                rollouts.push(tau);
            }
            by_mode.push(rollouts);
        }
        if self.student.learner().fingerprint() != before {
            return Err(HarnessError::StudentMutated(round));
        }
        if cfg.strategy == Strategy::Psn && cfg.eval_episodes > 0 {
            let shared = label_rollouts(&by_mode[0], Source::Assisted)?;
            let student = label_rollouts(&by_mode[1], Source::Unassisted)?;
            let spec = cfg.regressor_spec().with_seed(derive_seed(self.seed, "zpd", round as u64));
            let est = ZpdEstimator::fit(&spec, &shared, &student, done as u64)?;
            if cfg.artifacts {
                self.save_estimator(&est, done)?;
            }
            self.phi = Some(est);
        }
        Ok(())
    }

    fn save_estimator(&self, est: &PhiEstimator, done: usize) -> Result<(), HarnessError> {
        let dir = self.cfg.seed_dir(self.seed);
        let ck = ZpdCheckpoint::fitted(self.cfg.env.kind(), est);
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        ck.save(&dir.join("checkpoints").join(format!("phi_{done:04}.json")))?;
        let axes = AxisSpec::for_config(&self.cfg.env, ("x", "y"), 24)?;
        let map = heatmap_grid(est, self.env.state_dim(), &axes)?;
        std::fs::create_dir_all(dir.join("heatmaps"))?;
        map.write_csv(std::fs::File::create(dir.join("heatmaps").join(format!("phi_{done:04}.csv")))?)?;
        Ok(())
    }

    fn record(
        &mut self,
        records: &mut Vec<ExperimentRecord>,
        episode: usize,
        mode: Mode,
        tau: &Trajectory,
        started: Instant,
    ) -> Result<(), HarnessError> {
        let rec = ExperimentRecord {
            seed: self.seed,
            strategy: self.cfg.strategy,
            episode,
            mode,
            ret: tau.total_return(),
            terminal_kind: tau.terminal_kind,
            steps: tau.len(),
            collisions: usize::from(tau.terminal_kind == TerminalKind::Crash),
            wallclock_ms: self.cfg.record_wallclock.then(|| started.elapsed().as_millis() as u64),
        };
        self.writer.append(&rec)?;
        records.push(rec);
        Ok(())
    }

    /// Plays one episode. `learn` feeds every executed transition to the student.
    fn episode(
        &mut self,
        strategy: Strategy,
        eps: f64,
        env_seed: u64,
        rngs: EpisodeRngs<'_>,
        learn: bool,
    ) -> Result<Trajectory, HarnessError> {
        let cfg = self.cfg;
        let EpisodeRngs { actions, planner: planner_rng, mut learning } = rngs;
        let planner = if learn { &mut self.train_planner } else { &mut self.eval_planner };
        planner.reset_episode();
        let mut s = self.env.reset(env_seed);
        let mut tau = Trajectory::new();
        let zero = ConstantPhi::new(0.0).expect("0 is a valid learnability");
        loop {
            let student = self.student.learner();
            let expert = self.expert.as_ref();
            let student_dist = |st: &StateVector| ActionDistribution::epsilon_greedy(&student.q_values(st), eps);
            let expert_dist = |st: &StateVector| ActionDistribution::one_hot(expert.num_actions(), argmax(&expert.q_values(st)));
            let action = match strategy {
                Strategy::None => student_dist(&s).sample(actions),
                Strategy::Blend => blend(&expert_dist(&s), &student_dist(&s), cfg.alpha)?.sample(actions),
                Strategy::Qgap => {
                    let a = student_dist(&s).sample(actions);
                    qgap_override(expert, &s, a, &cfg.qgap, actions).action
                }
                Strategy::Psn => {
                    let phi: &dyn Learnability = match &self.phi {
                        Some(est) => est,
                        None => &zero,
                    };
                    let inputs = PsnInputs { student: &student_dist, expert: &expert_dist, phi, alpha: cfg.alpha, taper: true };
                    planner.act(self.env.as_ref(), &inputs, planner_rng)?.action
                }
            };
            let out = self.env.step(action)?;
            if learn {
                let tr = Transition {
                    state: s.clone(),
                    action,
                    reward: out.reward,
                    next_state: out.next_state.clone(),
                    terminal: matches!(out.terminal_kind, TerminalKind::Crash | TerminalKind::Success),
                };
                let rng = learning.as_deref_mut().expect("learning episodes carry a learning stream");
                self.student.learner_mut().observe(tr, rng)?;
            }
            tau.push(s, action, out.reward);
            s = out.next_state;
            if out.terminal {
                tau.terminal_kind = out.terminal_kind;
                return Ok(tau);
            }
        }
    }
}

/// Writes summary CSV and text next to the records under `dir`.
pub fn summarize_dir(dir: &Path) -> Result<Vec<StrategySummary>, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Config(format!("{} is not a directory", dir.display())));
    }
    let records = read_records_dir(dir)?;
    let rows = summarize(&records)?;
    write_summary_csv(&rows, std::fs::File::create(dir.join("summary.csv"))?)?;
    std::fs::write(dir.join("summary.txt"), format_summary(&rows))?;
    Ok(rows)
}
