use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::DqnConfig;
use crate::assist::{AssistanceLevel, OverrideRule, Strategy};
use crate::env::EnvConfig;
use crate::planner::PlannerConfig;
use crate::zpd::RegressorSpec;

/// Schema version of experiment files.
pub const CONFIG_VERSION: u32 = 1;

/// Student learner settings. Tabular on GridTrack, double-Q network on MiniLander.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    /// Tabular step size; the network learner uses `dqn.learning_rate`.
    pub learning_rate: f64,
    pub gamma: f64,
    /// Exploration decays linearly from start to end over the training episodes.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub dqn: DqnConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, gamma: 0.99, epsilon_start: 0.3, epsilon_end: 0.05, dqn: DqnConfig::default() }
    }
}

impl StudentConfig {
    pub fn epsilon(&self, episode: usize, total: usize) -> f64 {
        let frac = if total <= 1 { 1.0 } else { episode as f64 / (total - 1) as f64 };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac.clamp(0.0, 1.0)
    }
}

/// One experiment: a strategy run on one environment over a list of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub strategy: Strategy,
    #[serde(default = "default_alpha")]
    pub alpha: AssistanceLevel,
    #[serde(default = "default_total")]
    pub total_episodes: usize,
    #[serde(default = "default_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Seeds run concurrently; 0 means one per available core.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Write the wallclock column; disable for byte-comparable output.
    #[serde(default = "default_true")]
    pub record_wallclock: bool,
    /// Write estimator checkpoints, heatmaps and the final student.
    #[serde(default = "default_true")]
    pub artifacts: bool,
    /// Frozen expert; GridTrack falls back to exact value iteration when absent.
    #[serde(default)]
    pub expert_checkpoint: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub qgap: OverrideRule,
    /// Learnability regressor; defaults per environment.
    #[serde(default)]
    pub regressor: Option<RegressorSpec>,
}

fn default_alpha() -> AssistanceLevel {
    AssistanceLevel::new(0.1).expect("in range")
}
fn default_total() -> usize {
    300
}
fn default_interval() -> usize {
    30
}
fn default_eval_episodes() -> usize {
    10
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Defaults for `env` and `strategy` over `seeds`.
    pub fn new(env: EnvConfig, strategy: Strategy, seeds: Vec<u64>) -> Self {
        Self {
            version: CONFIG_VERSION,
            strategy,
            alpha: default_alpha(),
            total_episodes: default_total(),
            eval_interval: default_interval(),
            eval_episodes: default_eval_episodes(),
            seeds,
            output: default_output(),
            workers: default_workers(),
            record_wallclock: true,
            artifacts: true,
            expert_checkpoint: None,
            env,
            planner: PlannerConfig::default(),
            student: StudentConfig::default(),
            qgap: OverrideRule::default(),
            regressor: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.expert_checkpoint.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.student.epsilon_start) || !eps_ok(self.student.epsilon_end) {
            return bad("student epsilon must lie in [0, 1]".into());
        }
        self.planner.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.qgap.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn regressor_spec(&self) -> RegressorSpec {
        self.regressor.clone().unwrap_or_else(|| RegressorSpec::for_env(&self.env))
    }

    pub fn eval_rounds(&self) -> usize {
        self.total_episodes / self.eval_interval
    }

    /// Records one seed produces.
    pub fn records_per_seed(&self) -> usize {
        self.total_episodes + 2 * self.eval_episodes * self.eval_rounds()
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output.join(self.strategy.as_str()).join(seed.to_string())
    }
}

/// Parses an inclusive range `a..b` (also written `a..=b`) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("cannot parse seeds `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        (num(a)?..=num(b.strip_prefix('=').unwrap_or(b))?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let text = r#"
            version = 1
            strategy = "psn"
            seeds = [0, 1]
            [env]
            kind = "gridtrack"
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!((cfg.total_episodes, cfg.eval_interval, cfg.eval_episodes), (300, 30, 10));
        assert_eq!((cfg.planner.beam_size, cfg.planner.horizon), (3, 3));
        assert_eq!(cfg.alpha.value(), 0.1);
        assert_eq!(cfg.records_per_seed(), 300 + 2 * 10 * 10);
        assert_eq!(cfg.env.kind(), EnvKind::GridTrack);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ExperimentConfig::new(EnvConfig::default_for(EnvKind::GridTrack), Strategy::Blend, vec![0]);
        let mut c = base.clone();
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.eval_interval = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.seeds.clear();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("version = 1\nstrategy = \"psn\"\nseeds = [0]\nbogus = 3\n[env]\nkind = \"gridtrack\"").is_err());
        assert!(ExperimentConfig::from_toml_str("version = 1\nstrategy = \"psn\"\nalpha = 1.5\nseeds = [0]\n[env]\nkind = \"gridtrack\"").is_err());
    }

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 3").unwrap(), vec![7, 3]);
        assert_eq!(parse_seeds("3..3").unwrap(), vec![3]);
        assert!(parse_seeds("4..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let s = StudentConfig::default();
        assert_eq!(s.epsilon(0, 300), 0.3);
        assert!((s.epsilon(299, 300) - 0.05).abs() < 1e-12);
    }
}
