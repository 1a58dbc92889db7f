use rand::Rng;

use crate::env::{ActionId, StateVector};

/// One executed step. `terminal` marks task termination (crash or success),
/// not a tick-cap cut.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateVector,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, entries: Vec::with_capacity(capacity.min(4096)), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(tr);
        } else {
            self.entries[self.cursor] = tr;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform indices with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| &self.entries[rng.gen_range(0..self.entries.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            state: StateVector(vec![i as f64]),
            action: ActionId(0),
            reward: i as f64,
            next_state: StateVector(vec![i as f64]),
            terminal: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(tr(i));
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f64> = buf.entries.iter().map(|t| t.reward).collect();
        rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..4 {
            buf.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for t in buf.sample(40_000, &mut rng) {
            counts[t.reward as usize] += 1;
        }
        // binomial sd ~ 87; allow 4 sd
        for c in counts {
            assert!((c as i64 - 10_000).abs() < 350, "{counts:?}");
        }
        assert!(ReplayBuffer::new(2).sample(3, &mut rng).is_empty());
    }
}
