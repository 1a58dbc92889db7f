use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, AgentError, Learner, QFunction, Transition};
use crate::env::{ActionId, EnumerableMdp, StateVector};
use crate::scalar::Scalar;

/// Maps integer-valued states to a mixed-radix index (last dimension fastest).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableIndex {
    pub radices: Vec<usize>,
}

impl TableIndex {
    pub fn new(radices: Vec<usize>) -> Self {
        Self { radices }
    }

    pub fn len(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: &StateVector) -> Option<usize> {
        if s.dim() != self.radices.len() {
            return None;
        }
        let mut idx = 0usize;
        for (&v, &r) in s.iter().zip(&self.radices) {
            if v < 0.0 || v.fract() != 0.0 || v as usize >= r {
                return None;
            }
            idx = idx * r + v as usize;
        }
        Some(idx)
    }
}

/// Tabular action values.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable<F> {
    pub index: TableIndex,
    pub num_actions: usize,
    pub values: Vec<F>,
}

impl<F: Scalar> QTable<F> {
    pub fn zeros(index: TableIndex, num_actions: usize) -> Self {
        let values = vec![F::zero(); index.len() * num_actions];
        Self { index, num_actions, values }
    }

    pub fn for_mdp(mdp: &dyn EnumerableMdp) -> Self {
        Self::zeros(TableIndex::new(mdp.radices()), mdp.num_actions())
    }

    pub fn row(&self, state: usize) -> &[F] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn get(&self, state: usize, action: usize) -> F {
        self.values[state * self.num_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, v: F) {
        self.values[state * self.num_actions + action] = v;
    }

    pub fn max_at(&self, state: usize) -> F {
        self.row(state).iter().copied().fold(F::neg_infinity(), F::max)
    }

    pub fn row_for(&self, s: &StateVector) -> Option<&[F]> {
        self.index.index(s).map(|i| self.row(i))
    }

    /// Max-norm distance over the live states of `mdp`.
    pub fn max_gap(&self, other: &QTable<F>, mdp: &dyn EnumerableMdp) -> F {
        let mut gap = F::zero();
        for s in (0..mdp.num_states()).filter(|&s| mdp.is_live(s)) {
            for a in 0..self.num_actions {
                gap = gap.max((self.get(s, a) - other.get(s, a)).abs());
            }
        }
        gap
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            h ^= v.as_f64().to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

impl<F: Scalar> QFunction for QTable<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// States outside the table read as all-zero.
    fn q_values(&self, s: &StateVector) -> Vec<f64> {
        match self.row_for(s) {
            Some(row) => row.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; self.num_actions],
        }
    }
}

/// One-step TD (Q-learning) on a table.
#[derive(Clone, Debug)]
pub struct TabularLearner<F> {
    pub table: QTable<F>,
    pub learning_rate: F,
    pub gamma: F,
}

impl<F: Scalar> TabularLearner<F> {
    pub fn new(table: QTable<F>, learning_rate: F, gamma: F) -> Self {
        Self { table, learning_rate, gamma }
    }

    /// `Q(s,a) += lr * (r + gamma * max Q(s') - Q(s,a))`, target `r` when terminal.
    /// A timeout is not terminal for the target: the episode is cut, the task is not over.
    pub fn update(&mut self, tr: &Transition) -> Result<(), AgentError> {
        let s = self.table.index.index(&tr.state).ok_or_else(|| AgentError::UnknownState(tr.state.0.clone()))?;
        let a = tr.action.0;
        let r = F::of(tr.reward);
        let target = if tr.terminal {
            r
        } else {
            let next = self
                .table
                .index
                .index(&tr.next_state)
                .ok_or_else(|| AgentError::UnknownState(tr.next_state.0.clone()))?;
            r + self.gamma * self.table.max_at(next)
        };
        if !target.is_finite() {
            return Err(AgentError::NonFiniteTarget { target: target.as_f64(), action: a });
        }
        let q = self.table.get(s, a);
        self.table.set(s, a, q + self.learning_rate * (target - q));
        Ok(())
    }
}

impl<F: Scalar> QFunction for TabularLearner<F> {
    fn num_actions(&self) -> usize {
        self.table.num_actions
    }

    fn q_values(&self, s: &StateVector) -> Vec<f64> {
        self.table.q_values(s)
    }
}

impl<F: Scalar> Learner for TabularLearner<F> {
    fn observe(&mut self, tr: Transition, _rng: &mut dyn rand::RngCore) -> Result<(), AgentError> {
        self.update(&tr)
    }

    fn fingerprint(&self) -> u64 {
        self.table.fingerprint()
    }
}

/// Update budget for stand-alone tabular training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularBudget {
    pub updates: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Episodes are cut after this many steps and restarted from a fresh random state.
    pub episode_len: usize,
}

impl Default for TabularBudget {
    fn default() -> Self {
        Self { updates: 400_000, learning_rate: 0.5, gamma: 0.99, epsilon: 0.5, episode_len: 5 }
    }
}

/// Q-learning with exploring starts: each episode begins at a uniformly drawn
/// live state and follows an epsilon-greedy policy on the current table.
pub fn train_tabular<R: Rng + ?Sized>(
    mdp: &dyn EnumerableMdp,
    budget: &TabularBudget,
    rng: &mut R,
) -> Result<TabularLearner<f64>, AgentError> {
    if !(0.0..=1.0).contains(&budget.epsilon) {
        return Err(AgentError::InvalidEpsilon(budget.epsilon));
    }
    let live: Vec<usize> = (0..mdp.num_states()).filter(|&s| mdp.is_live(s)).collect();
    let mut learner = TabularLearner::new(QTable::for_mdp(mdp), budget.learning_rate, budget.gamma);
    if live.is_empty() {
        return Ok(learner);
    }
    let n = mdp.num_actions();
    let mut done = 0;
    while done < budget.updates {
        let mut s = live[rng.gen_range(0..live.len())];
        for _ in 0..budget.episode_len.max(1) {
            let a = if rng.gen::<f64>() < budget.epsilon {
                rng.gen_range(0..n)
            } else {
                argmax(learner.table.row(s))
            };
            let step = mdp.transition(s, a);
            learner.update(&Transition {
                state: mdp.state_at(s),
                action: ActionId(a),
                reward: step.reward,
                next_state: step.next.map_or_else(|| mdp.state_at(s), |n| mdp.state_at(n)),
                terminal: step.next.is_none(),
            })?;
            done += 1;
            match step.next {
                Some(next) if done < budget.updates => s = next,
                _ => break,
            }
        }
    }
    Ok(learner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionId;

    fn one_cell() -> TabularLearner<f64> {
        TabularLearner::new(QTable::zeros(TableIndex::new(vec![2]), 4), 0.5, 0.9)
    }

    fn tr(s: f64, a: usize, r: f64, s2: f64, terminal: bool) -> Transition {
        Transition {
            state: StateVector(vec![s]),
            action: ActionId(a),
            reward: r,
            next_state: StateVector(vec![s2]),
            terminal,
        }
    }

    #[test]
    fn terminal_td_update() {
        let mut l = one_cell();
        l.update(&tr(0.0, 2, 1.0, 1.0, true)).unwrap();
        assert_eq!(l.table.get(0, 2), 0.5);
    }

    #[test]
    fn bootstrapped_td_update() {
        let mut l = one_cell();
        l.learning_rate = 0.1;
        l.table.set(0, 1, 2.0);
        l.table.set(1, 3, 4.0);
        l.update(&tr(0.0, 1, 0.0, 1.0, false)).unwrap();
        assert!((l.table.get(0, 1) - 2.16).abs() < 1e-12);
    }

    #[test]
    fn non_finite_target_aborts() {
        let mut l = one_cell();
        let before = l.table.clone();
        assert!(matches!(l.update(&tr(0.0, 0, f64::NAN, 1.0, true)), Err(AgentError::NonFiniteTarget { .. })));
        assert_eq!(l.table, before);
        assert!(matches!(l.update(&tr(5.0, 0, 0.0, 1.0, true)), Err(AgentError::UnknownState(_))));
    }

    #[test]
    fn index_is_mixed_radix() {
        let idx = TableIndex::new(vec![3, 2, 4]);
        assert_eq!(idx.index(&StateVector(vec![2.0, 1.0, 3.0])), Some(23));
        assert_eq!(idx.index(&StateVector(vec![0.0, 0.0, 0.0])), Some(0));
        assert_eq!(idx.index(&StateVector(vec![3.0, 0.0, 0.0])), None);
    }

    #[test]
    fn exploring_starts_reach_value_iteration() {
        use crate::env::{GridTrack, GridTrackConfig};
        use rand::SeedableRng;
        let mut cfg = GridTrackConfig::default();
        cfg.layout = vec!["S...#".into(), "##..G".into()];
        let env = GridTrack::new(cfg).unwrap();
        let (q_star, _) = crate::agents::value_iteration::<f64>(&env, 0.99, 1e-10).unwrap();
        let budget = TabularBudget { updates: 40_000, ..TabularBudget::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let learner = train_tabular(&env, &budget, &mut rng).unwrap();
        assert!(learner.table.max_gap(&q_star, &env) < 0.05);
        let bad = TabularBudget { epsilon: 1.5, ..budget };
        assert!(matches!(train_tabular(&env, &bad, &mut rng), Err(AgentError::InvalidEpsilon(_))));
    }
}
