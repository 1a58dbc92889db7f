//! Learnability estimation.
//!
//! Two reward-to-go regressors are fit, one on assisted rollouts and one on
//! unassisted rollouts. Their difference, centred by its median and scaled by
//! half its interquartile range, is squashed through a sigmoid into (0, 1).
//! States where assistance changes the outcome most score highest.

mod heatmap;
mod regressor;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvKind, StateVector};
use crate::planner::Trajectory;
use crate::scalar::{sigmoid, Scalar};
use crate::stats;

pub use heatmap::{heatmap_grid, AxisSpec, Heatmap};
pub use regressor::{Affine, FeatureMap, Regressor, RegressorRecord, RegressorSpec};

/// Lower bound on the normalisation scale.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ZpdError {
    #[error("no episodes to label")]
    NoEpisodes,
    #[error("episode {0} has no steps or did not finish")]
    IncompleteEpisode(usize),
    #[error("reward-to-go label is not finite")]
    NonFiniteLabel,
    #[error("empty training set")]
    EmptyDataset,
    #[error("state has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("least-squares system is singular")]
    Singular,
    #[error("constant learnability {0} outside [0, 1]")]
    PhiOutOfRange(f64),
    #[error("axis {axis} out of range for a {dim}-dimensional state")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("unknown state dimension `{0}`")]
    UnknownAxis(String),
    #[error("heatmap axes must be two distinct dimensions with at least one value each")]
    DegenerateAxes,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Assisted,
    Unassisted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub state: StateVector,
    /// Undiscounted sum of rewards from this state to the end of the episode.
    pub reward_to_go: f64,
    pub source: Source,
}

/// One label per visited state, carrying the suffix return from that state on.
pub fn label_rollouts(episodes: &[Trajectory], source: Source) -> Result<Vec<LabeledState>, ZpdError> {
    if episodes.is_empty() {
        return Err(ZpdError::NoEpisodes);
    }
    let mut out = Vec::with_capacity(episodes.iter().map(Trajectory::len).sum());
    for (i, ep) in episodes.iter().enumerate() {
        if ep.is_empty() || !ep.truncated_by_terminal() {
            return Err(ZpdError::IncompleteEpisode(i));
        }
        let start = out.len();
        let mut to_go = 0.0;
        for step in ep.steps.iter().rev() {
            to_go += step.reward;
            if !to_go.is_finite() {
                return Err(ZpdError::NonFiniteLabel);
            }
            out.push(LabeledState { state: step.state.clone(), reward_to_go: to_go, source });
        }
        out[start..].reverse();
    }
    Ok(out)
}

/// Anything that scores states by learnability.
pub trait Learnability: Send + Sync {
    fn phi(&self, s: &StateVector) -> f64;
}

/// Same learnability everywhere. Also covers the endpoint values 0 and 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantPhi(f64);

impl ConstantPhi {
    pub fn new(phi: f64) -> Result<Self, ZpdError> {
        if (0.0..=1.0).contains(&phi) {
            Ok(Self(phi))
        } else {
            Err(ZpdError::PhiOutOfRange(phi))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Learnability for ConstantPhi {
    fn phi(&self, _: &StateVector) -> f64 {
        self.0
    }
}

/// Fitted learnability estimator. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ZpdEstimator<F> {
    pub rho_sa: Regressor<F>,
    pub rho_ua: Regressor<F>,
    pub shift: F,
    pub scale: F,
    /// Learning step (training episode count) the estimator was fit at.
    pub fitted_at: u64,
}

impl<F: Scalar> ZpdEstimator<F> {
    /// Fits each regressor on its own source and takes the normalisation
    /// statistics of their difference over the union of training states.
    pub fn fit(
        spec: &RegressorSpec,
        d_shared: &[LabeledState],
        d_student: &[LabeledState],
        fitted_at: u64,
    ) -> Result<Self, ZpdError> {
        if d_shared.is_empty() || d_student.is_empty() {
            return Err(ZpdError::EmptyDataset);
        }
        let fit_one = |data: &[LabeledState]| {
            let states: Vec<&StateVector> = data.iter().map(|l| &l.state).collect();
            let targets: Vec<f64> = data.iter().map(|l| l.reward_to_go).collect();
            Regressor::<F>::fit(spec, &states, &targets)
        };
        let rho_sa = fit_one(d_shared)?;
        let rho_ua = fit_one(d_student)?;
        let deltas: Vec<F> = d_shared
            .iter()
            .chain(d_student)
            .map(|l| rho_sa.predict(&l.state) - rho_ua.predict(&l.state))
            .collect();
        let shift = stats::median(&deltas).ok_or(ZpdError::EmptyDataset)?;
        let spread = stats::iqr(&deltas).ok_or(ZpdError::EmptyDataset)?;
        let scale = (spread / F::of(2.0)).max(F::of(MIN_SCALE));
        Ok(Self { rho_sa, rho_ua, shift, scale, fitted_at })
    }

    /// Raw difference of predicted reward-to-go, assisted minus unassisted.
    pub fn delta(&self, s: &[f64]) -> F {
        self.rho_sa.predict(s) - self.rho_ua.predict(s)
    }

    pub fn predict(&self, s: &[f64]) -> F {
        sigmoid((self.delta(s) - self.shift) / self.scale)
    }
}

impl<F: Scalar> Learnability for ZpdEstimator<F> {
    fn phi(&self, s: &StateVector) -> f64 {
        self.predict(s).as_f64()
    }
}

const FORMAT: &str = "psn-zpd";
const VERSION: u32 = 1;

/// On-disk learnability estimator, stored next to policy checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZpdCheckpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvKind,
    pub fitted_at: u64,
    #[serde(flatten)]
    pub body: ZpdBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZpdBody {
    Fitted { shift: f64, scale: f64, rho_sa: RegressorRecord, rho_ua: RegressorRecord },
    Constant { phi: f64 },
}

impl ZpdCheckpoint {
    pub fn fitted<F: Scalar>(env: EnvKind, est: &ZpdEstimator<F>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            env,
            fitted_at: est.fitted_at,
            body: ZpdBody::Fitted {
                shift: est.shift.as_f64(),
                scale: est.scale.as_f64(),
                rho_sa: est.rho_sa.to_record(),
                rho_ua: est.rho_ua.to_record(),
            },
        }
    }

    pub fn constant(env: EnvKind, phi: f64) -> Result<Self, ZpdError> {
        ConstantPhi::new(phi)?;
        Ok(Self { format: FORMAT.into(), version: VERSION, env, fitted_at: 0, body: ZpdBody::Constant { phi } })
    }

    pub fn from_json(text: &str) -> Result<Self, ZpdError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| ZpdError::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(ZpdError::Checkpoint(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self, ZpdError> {
        let text = std::fs::read_to_string(path).map_err(|e| ZpdError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ZpdError> {
        let text = serde_json::to_string(self).map_err(|e| ZpdError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ZpdError::Io(format!("{}: {e}", path.display())))
    }

    pub fn estimator<F: Scalar>(&self) -> Result<Option<ZpdEstimator<F>>, ZpdError> {
        match &self.body {
            ZpdBody::Fitted { shift, scale, rho_sa, rho_ua } => {
                if !(*scale > 0.0) || !shift.is_finite() {
                    return Err(ZpdError::Checkpoint("scale must be positive and shift finite".into()));
                }
                Ok(Some(ZpdEstimator {
                    rho_sa: Regressor::from_record(rho_sa)?,
                    rho_ua: Regressor::from_record(rho_ua)?,
                    shift: F::of(*shift),
                    scale: F::of(*scale),
                    fitted_at: self.fitted_at,
                }))
            }
            ZpdBody::Constant { .. } => Ok(None),
        }
    }

    pub fn learnability(&self) -> Result<Box<dyn Learnability>, ZpdError> {
        match &self.body {
            ZpdBody::Constant { phi } => Ok(Box::new(ConstantPhi::new(*phi)?)),
            ZpdBody::Fitted { .. } => Ok(Box::new(self.estimator::<f64>()?.expect("fitted body"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionId, TerminalKind};
    use proptest::prelude::*;

    fn episode(rewards: &[f64]) -> Trajectory {
        let mut t = Trajectory::new();
        for (i, r) in rewards.iter().enumerate() {
            t.push(StateVector(vec![i as f64]), ActionId(0), *r);
        }
        t.terminal_kind = TerminalKind::Success;
        t
    }

    fn labels(points: &[(f64, f64)], source: Source) -> Vec<LabeledState> {
        points
            .iter()
            .map(|&(s, r)| LabeledState { state: StateVector(vec![s]), reward_to_go: r, source })
            .collect()
    }

    fn raw1() -> RegressorSpec {
        RegressorSpec::Linear { features: FeatureMap::Raw { dim: 1 }, lambda: 1e-6 }
    }

    #[test]
    fn suffix_sums() {
        let l = label_rollouts(&[episode(&[1.0, 2.0, 3.0])], Source::Assisted).unwrap();
        assert_eq!(l.iter().map(|x| x.reward_to_go).collect::<Vec<_>>(), vec![6.0, 5.0, 3.0]);
        assert_eq!(l[0].state, StateVector(vec![0.0]));
        let one = label_rollouts(&[episode(&[-10.0])], Source::Unassisted).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].reward_to_go, -10.0);
        let ep = episode(&[0.5, -1.0, 4.0]);
        assert_eq!(label_rollouts(&[ep.clone()], Source::Assisted).unwrap()[0].reward_to_go, ep.total_return());
    }

    #[test]
    fn label_errors() {
        assert_eq!(label_rollouts(&[], Source::Assisted), Err(ZpdError::NoEpisodes));
        let mut live = episode(&[1.0]);
        live.terminal_kind = TerminalKind::None;
        assert_eq!(label_rollouts(&[episode(&[1.0]), live], Source::Assisted), Err(ZpdError::IncompleteEpisode(1)));
    }

    #[test]
    fn identical_data_gives_one_half() {
        let pts: Vec<(f64, f64)> = (0..30).map(|i| (i as f64 / 29.0, (i * 7 % 5) as f64)).collect();
        let est = ZpdEstimator::<f64>::fit(&raw1(), &labels(&pts, Source::Assisted), &labels(&pts, Source::Unassisted), 0)
            .unwrap();
        assert_eq!(est.scale, MIN_SCALE);
        for s in [-3.0, 0.0, 0.4, 1.0, 7.0] {
            assert_eq!(est.predict(&[s]), 0.5);
        }
    }

    #[test]
    fn assistance_region_scores_higher() {
        let assisted: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 / 100.0, 10.0)).collect();
        let unassisted: Vec<(f64, f64)> =
            (0..=100).map(|i| i as f64 / 100.0).map(|s| (s, if s <= 0.5 { 10.0 } else { 0.0 })).collect();
        let est = ZpdEstimator::<f64>::fit(
            &raw1(),
            &labels(&assisted, Source::Assisted),
            &labels(&unassisted, Source::Unassisted),
            30,
        )
        .unwrap();
        assert!(est.predict(&[0.75]) > est.predict(&[0.25]));
        assert_eq!(est.fitted_at, 30);
    }

    #[test]
    fn sigmoid_anchor_points() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, i as f64)).collect();
        let zero: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.0)).collect();
        let est =
            ZpdEstimator::<f64>::fit(&raw1(), &labels(&pts, Source::Assisted), &labels(&zero, Source::Unassisted), 0)
                .unwrap();
        // delta(s) = s, so shift and scale map directly to states
        let at_shift = est.shift;
        assert!((est.predict(&[at_shift]) - 0.5).abs() < 1e-6);
        let one_up = est.predict(&[at_shift + est.scale]);
        assert!((one_up - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-6, "{one_up}");
    }

    #[test]
    fn empty_datasets_rejected() {
        let d = labels(&[(0.0, 1.0)], Source::Assisted);
        assert_eq!(ZpdEstimator::<f64>::fit(&raw1(), &[], &d, 0), Err(ZpdError::EmptyDataset));
        assert_eq!(ZpdEstimator::<f64>::fit(&raw1(), &d, &[], 0), Err(ZpdError::EmptyDataset));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = labels(&[(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)], Source::Assisted);
        let u = labels(&[(0.0, 0.0), (1.0, 1.0), (2.0, 5.0)], Source::Unassisted);
        let est = ZpdEstimator::<f64>::fit(&raw1(), &a, &u, 90).unwrap();
        let ck = ZpdCheckpoint::fitted(EnvKind::GridTrack, &est);
        let back = ZpdCheckpoint::from_json(&serde_json::to_string(&ck).unwrap()).unwrap();
        assert_eq!(back.fitted_at, 90);
        let phi = back.learnability().unwrap();
        for s in [0.0, 0.5, 2.0] {
            assert_eq!(phi.phi(&StateVector(vec![s])), est.predict(&[s]));
        }
        let c = ZpdCheckpoint::constant(EnvKind::MiniLander, 1.0).unwrap();
        assert_eq!(c.learnability().unwrap().phi(&StateVector(vec![0.0; 8])), 1.0);
        assert!(ZpdCheckpoint::constant(EnvKind::MiniLander, 1.5).is_err());
        assert!(ZpdCheckpoint::from_json(r#"{"format":"other","version":1,"env":"gridtrack","fitted_at":0,"kind":"constant","phi":0.5}"#).is_err());
    }

    proptest! {
        #[test]
        fn predict_stays_open_unit(
            a in prop::collection::vec((-5.0f64..5.0, -100.0f64..100.0), 2..30),
            u in prop::collection::vec((-5.0f64..5.0, -100.0f64..100.0), 2..30),
            probe in -1e6f64..1e6,
        ) {
            let est = ZpdEstimator::<f64>::fit(&raw1(), &labels(&a, Source::Assisted), &labels(&u, Source::Unassisted), 0).unwrap();
            let p = est.predict(&[probe]);
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn predict_is_monotone_in_delta(
            a in prop::collection::vec((-5.0f64..5.0, -100.0f64..100.0), 2..30),
            u in prop::collection::vec((-5.0f64..5.0, -100.0f64..100.0), 2..30),
            s1 in -5.0f64..5.0, s2 in -5.0f64..5.0,
        ) {
            let est = ZpdEstimator::<f64>::fit(&raw1(), &labels(&a, Source::Assisted), &labels(&u, Source::Unassisted), 0).unwrap();
            if est.delta(&[s1]) > est.delta(&[s2]) {
                prop_assert!(est.predict(&[s1]) >= est.predict(&[s2]));
            }
        }
    }
}
