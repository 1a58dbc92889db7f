//! Assistance strategies: policy blending, learnability-tapered blending,
//! the Q-gap override baseline and the unassisted passthrough.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{argmax, ActionDistribution, QFunction};
use crate::env::{ActionId, StateVector};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AssistError {
    #[error("assistance level {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("learnability {0} outside [0, 1]")]
    PhiOutOfRange(f64),
    #[error("distributions over {0} and {1} actions cannot be blended")]
    LengthMismatch(usize, usize),
    #[error("override rule needs threshold >= 0 and gain > 0 (got {threshold}, {gain})")]
    InvalidRule { threshold: f64, gain: f64 },
}

/// Weight on the expert in the shared policy.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AssistanceLevel(f64);

impl AssistanceLevel {
    pub const NONE: AssistanceLevel = AssistanceLevel(0.0);
    pub const FULL: AssistanceLevel = AssistanceLevel(1.0);

    pub fn new(alpha: f64) -> Result<Self, AssistError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(AssistError::AlphaOutOfRange(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AssistanceLevel {
    type Error = AssistError;
    fn try_from(v: f64) -> Result<Self, AssistError> {
        Self::new(v)
    }
}

impl From<AssistanceLevel> for f64 {
    fn from(a: AssistanceLevel) -> f64 {
        a.0
    }
}

/// Which assistance strategy drives the executed actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Psn,
    Blend,
    Qgap,
    None,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Psn => "psn",
            Strategy::Blend => "blend",
            Strategy::Qgap => "qgap",
            Strategy::None => "none",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "psn" => Ok(Self::Psn),
            "blend" => Ok(Self::Blend),
            "qgap" => Ok(Self::Qgap),
            "none" => Ok(Self::None),
            other => Err(format!("unknown strategy `{other}` (psn|blend|qgap|none)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `alpha * expert + (1 - alpha) * student`, componentwise.
pub fn blend<F: Scalar>(
    expert: &ActionDistribution<F>,
    student: &ActionDistribution<F>,
    alpha: AssistanceLevel,
) -> Result<ActionDistribution<F>, AssistError> {
    if expert.len() != student.len() {
        return Err(AssistError::LengthMismatch(expert.len(), student.len()));
    }
    let a = F::of(alpha.value());
    let b = F::one() - a;
    let probs = expert.probs().iter().zip(student.probs()).map(|(&e, &s)| a * e + b * s).collect();
    Ok(ActionDistribution::from_raw(probs))
}

/// Learnability-tapered assistance `alpha * (1 - phi)`.
pub fn adaptive_alpha(alpha: AssistanceLevel, phi: f64) -> Result<AssistanceLevel, AssistError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(AssistError::PhiOutOfRange(phi));
    }
    Ok(AssistanceLevel(alpha.value() * (1.0 - phi)))
}

/// Unassisted baseline: the student's own distribution.
pub fn no_assist<F: Scalar>(student: &ActionDistribution<F>) -> ActionDistribution<F> {
    student.clone()
}

/// Maps the optimal-value gap to an override probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverrideRule {
    pub threshold: f64,
    pub gain: f64,
    /// Divide the gap by the state's Q-value spread (max - min) before applying the rule.
    pub normalize: bool,
}

impl Default for OverrideRule {
    fn default() -> Self {
        Self { threshold: 0.5, gain: 0.4, normalize: true }
    }
}

impl OverrideRule {
    pub fn new(threshold: f64, gain: f64) -> Result<Self, AssistError> {
        let rule = Self { threshold, gain, normalize: false };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), AssistError> {
        if !(self.threshold >= 0.0) || !(self.gain > 0.0) {
            return Err(AssistError::InvalidRule { threshold: self.threshold, gain: self.gain });
        }
        Ok(())
    }

    /// Override probability for a gap: 0 at or below the threshold, else `min(1, gain * gap)`.
    pub fn probability(&self, gap: f64) -> f64 {
        if gap <= self.threshold {
            0.0
        } else {
            (self.gain * gap).clamp(0.0, 1.0)
        }
    }
}

/// Result of one override decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverrideDecision {
    pub action: ActionId,
    pub gap: f64,
    pub overridden: bool,
}

/// Replaces the student's action by the optimal one with a probability that grows with the value gap.
pub fn qgap_override<R: Rng + ?Sized>(
    q_star: &dyn QFunction,
    s: &StateVector,
    a_student: ActionId,
    rule: &OverrideRule,
    rng: &mut R,
) -> OverrideDecision {
    let q = q_star.q_values(s);
    let best = argmax(&q);
    let mut gap = q[best] - q[a_student.0];
    if rule.normalize {
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = q[best] - lo;
        gap = if spread > 0.0 { gap / spread } else { 0.0 };
    }
    let p = rule.probability(gap);
    // draw only when an override is possible so zero-gap states consume no randomness
    let overridden = p > 0.0 && rng.gen::<f64>() < p;
    OverrideDecision { action: if overridden { ActionId(best) } else { a_student }, gap, overridden }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(p: &[f64]) -> ActionDistribution<f64> {
        ActionDistribution::new(p.to_vec()).unwrap()
    }

    struct FixedQ(Vec<f64>);
    impl QFunction for FixedQ {
        fn num_actions(&self) -> usize {
            self.0.len()
        }
        fn q_values(&self, _: &StateVector) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn blend_endpoints_and_arithmetic() {
        let e = d(&[0.8, 0.2, 0.0, 0.0]);
        let s = d(&[0.2, 0.8, 0.0, 0.0]);
        assert_eq!(blend(&e, &s, AssistanceLevel::FULL).unwrap(), e);
        assert_eq!(blend(&e, &s, AssistanceLevel::NONE).unwrap(), s);
        let mix = blend(&e, &s, AssistanceLevel::new(0.1).unwrap()).unwrap();
        for (got, want) in mix.probs().iter().zip([0.26, 0.74, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(blend(&e, &d(&[0.5, 0.5]), AssistanceLevel::FULL), Err(AssistError::LengthMismatch(4, 2)));
    }

    #[test]
    fn blend_is_affine_in_alpha() {
        let e = d(&[0.7, 0.1, 0.1, 0.1]);
        let s = d(&[0.0, 0.25, 0.5, 0.25]);
        let at = |a: f64| blend(&e, &s, AssistanceLevel::new(a).unwrap()).unwrap();
        for i in 0..4 {
            let slope = at(1.0).probs()[i] - at(0.0).probs()[i];
            for a in [0.25, 0.5, 0.75] {
                assert!((at(a).probs()[i] - (at(0.0).probs()[i] + a * slope)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adaptive_alpha_examples() {
        let a = |v| AssistanceLevel::new(v).unwrap();
        assert_eq!(adaptive_alpha(a(0.1), 0.0).unwrap().value(), 0.1);
        assert_eq!(adaptive_alpha(a(0.1), 1.0).unwrap().value(), 0.0);
        assert_eq!(adaptive_alpha(a(0.8), 0.5).unwrap().value(), 0.4);
        assert_eq!(adaptive_alpha(a(0.8), 1.5), Err(AssistError::PhiOutOfRange(1.5)));
        assert_eq!(AssistanceLevel::new(-0.1), Err(AssistError::AlphaOutOfRange(-0.1)));
    }

    #[test]
    fn no_assist_matches_zero_blend() {
        let e = d(&[1.0, 0.0, 0.0, 0.0]);
        let s = d(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(no_assist(&s), s);
        assert_eq!(blend(&e, &s, AssistanceLevel::NONE).unwrap(), no_assist(&s));
    }

    #[test]
    fn override_respects_gap_and_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = FixedQ(vec![1.0, 3.0, 2.5, 2.0]);
        let s = StateVector(vec![0.0]);
        let rule = OverrideRule::new(1.0, 0.4).unwrap();
        for _ in 0..1000 {
            // student already optimal
            assert_eq!(qgap_override(&q, &s, ActionId(1), &rule, &mut rng).action, ActionId(1));
            // gap 0.5 below threshold 1.0
            assert_eq!(qgap_override(&q, &s, ActionId(2), &rule, &mut rng).action, ActionId(2));
        }
        assert!(OverrideRule::new(-1.0, 0.4).is_err());
        assert!(OverrideRule::new(0.5, 0.0).is_err());
    }

    #[test]
    fn override_frequency_matches_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let q = FixedQ(vec![0.0, 2.0, 1.0, 1.5]);
        let rule = OverrideRule::new(1.0, 0.4).unwrap();
        let s = StateVector(vec![0.0]);
        let n = 10_000;
        let hits = (0..n).filter(|_| qgap_override(&q, &s, ActionId(0), &rule, &mut rng).overridden).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.02, "{rate}");
    }

    proptest! {
        #[test]
        fn blend_stays_a_distribution(
            e in prop::collection::vec(0.0f64..1.0, 4),
            s in prop::collection::vec(0.0f64..1.0, 4),
            alpha in 0.0f64..=1.0,
        ) {
            let norm = |v: Vec<f64>| {
                let t: f64 = v.iter().sum::<f64>() + 1e-3;
                let mut v: Vec<f64> = v.iter().map(|x| (x + 1e-3 / 4.0) / t).collect();
                let sum: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= sum);
                ActionDistribution::new(v).unwrap()
            };
            let out = blend(&norm(e), &norm(s), AssistanceLevel::new(alpha).unwrap()).unwrap();
            let total: f64 = out.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(out.probs().iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn adaptive_alpha_never_increases(alpha in 0.0f64..=1.0, phi in 0.0f64..=1.0) {
            let a = AssistanceLevel::new(alpha).unwrap();
            prop_assert!(adaptive_alpha(a, phi).unwrap().value() <= alpha);
        }

        #[test]
        fn override_picks_student_or_best(q in prop::collection::vec(-10.0f64..10.0, 4), a in 0usize..4, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let best = argmax(&q);
            let fq = FixedQ(q);
            let out = qgap_override(&fq, &StateVector(vec![0.0]), ActionId(a), &OverrideRule::default(), &mut rng);
            prop_assert!(out.action.0 == a || out.action.0 == best);
        }
    }
}
