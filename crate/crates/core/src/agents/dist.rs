use rand::Rng;

use super::AgentError;
use crate::env::ActionId;
use crate::scalar::Scalar;

/// Probability vector over the discrete action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution<F> {
    probs: Vec<F>,
}

impl<F: Scalar> ActionDistribution<F> {
    /// Validates non-negativity and normalization (within 1e-9).
    pub fn new(probs: Vec<F>) -> Result<Self, AgentError> {
        if probs.is_empty() {
            return Err(AgentError::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < F::zero()) {
            return Err(AgentError::InvalidDistribution(format!("{probs:?} has a negative or non-finite entry")));
        }
        let total: F = probs.iter().copied().sum();
        if (total - F::one()).abs().as_f64() > 1e-9_f64.max(F::epsilon().as_f64() * 8.0) {
            return Err(AgentError::InvalidDistribution(format!("{probs:?} sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_raw(probs: Vec<F>) -> Self {
        Self { probs }
    }

    pub fn one_hot(num_actions: usize, action: usize) -> Self {
        let mut probs = vec![F::zero(); num_actions];
        probs[action] = F::one();
        Self { probs }
    }

    pub fn uniform(num_actions: usize) -> Self {
        Self { probs: vec![F::one() / F::of(num_actions as f64); num_actions] }
    }

    /// One-hot on the argmax (ties to the lowest id) mixed with `epsilon` uniform mass.
    pub fn epsilon_greedy(q: &[f64], epsilon: f64) -> Self {
        let n = q.len();
        let best = super::argmax(q);
        let eps = F::of(epsilon);
        let share = eps / F::of(n as f64);
        let probs = (0..n)
            .map(|i| if i == best { F::one() - eps + share } else { share })
            .collect();
        Self { probs }
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> ActionId {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        ActionId(best)
    }

    /// Inverse-CDF sample; one uniform draw per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionId {
        let u = F::of(rng.gen::<f64>());
        let mut acc = F::zero();
        let mut last_positive = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > F::zero() {
                last_positive = i;
            }
            acc += *p;
            if u < acc {
                return ActionId(i);
            }
        }
        ActionId(last_positive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_greedy_examples() {
        let q = [1.0, 5.0, 2.0, 0.0];
        assert_eq!(ActionDistribution::<f64>::epsilon_greedy(&q, 0.0).probs(), &[0.0, 1.0, 0.0, 0.0]);
        let d = ActionDistribution::<f64>::epsilon_greedy(&q, 0.2);
        for (got, want) in d.probs().iter().zip([0.05, 0.85, 0.05, 0.05]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(ActionDistribution::<f64>::epsilon_greedy(&[3.0, 3.0, 0.0, 0.0], 0.0).probs(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ActionDistribution::<f64>::epsilon_greedy(&q, 1.0), ActionDistribution::uniform(4));
    }

    #[test]
    fn rejects_invalid() {
        assert!(ActionDistribution::new(vec![0.5f64, 0.6]).is_err());
        assert!(ActionDistribution::new(vec![-0.1f64, 1.1]).is_err());
        assert!(ActionDistribution::<f64>::new(vec![]).is_err());
        assert!(ActionDistribution::new(vec![0.25f32; 4]).is_ok());
    }

    #[test]
    fn sampling_never_picks_zero_mass() {
        let d = ActionDistribution::new(vec![0.0, 0.3, 0.0, 0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = d.sample(&mut rng).0;
            assert!(a == 1 || a == 3);
        }
    }

    proptest! {
        #[test]
        fn epsilon_greedy_is_normalized(q in prop::collection::vec(-100.0f64..100.0, 1..8), eps in 0.0f64..=1.0) {
            let d = ActionDistribution::<f64>::epsilon_greedy(&q, eps);
            let total: f64 = d.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        }
    }
}
