use super::{AgentError, QTable};
use crate::env::{EnumerableMdp, Environment};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct ValueIterationReport {
    pub sweeps: usize,
    /// Bellman residual (max-norm change) after each sweep.
    pub residuals: Vec<f64>,
}

/// Synchronous Q-value iteration until the Bellman residual drops below `tol`.
pub fn value_iteration<F: Scalar>(
    mdp: &dyn EnumerableMdp,
    gamma: F,
    tol: F,
) -> Result<(QTable<F>, ValueIterationReport), AgentError> {
    let live: Vec<usize> = (0..mdp.num_states()).filter(|&s| mdp.is_live(s)).collect();
    let actions = mdp.num_actions();
    // Transitions are deterministic and fixed; cache them.
    let model: Vec<(usize, usize, F, Option<usize>)> = live
        .iter()
        .flat_map(|&s| {
            (0..actions).map(move |a| {
                let t = mdp.transition(s, a);
                (s, a, F::of(t.reward), t.next)
            })
        })
        .collect();

    let mut q = QTable::for_mdp(mdp);
    let mut next = q.clone();
    let mut residuals = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let mut residual = F::zero();
        for &(s, a, r, succ) in &model {
            let v = match succ {
                Some(n) => r + gamma * q.max_at(n),
                None => r,
            };
            residual = residual.max((v - q.get(s, a)).abs());
            next.set(s, a, v);
        }
        std::mem::swap(&mut q, &mut next);
        residuals.push(residual.as_f64());
        if residual < tol {
            return Ok((q, ValueIterationReport { sweeps: sweep, residuals }));
        }
    }
    Err(AgentError::NotConverged {
        tol: tol.as_f64(),
        sweeps: MAX_SWEEPS,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Value iteration on an environment, rejecting ones without a finite view.
pub fn value_iteration_env<F: Scalar>(
    env: &dyn Environment,
    gamma: F,
    tol: F,
) -> Result<(QTable<F>, ValueIterationReport), AgentError> {
    let mdp = env.as_enumerable().ok_or(AgentError::NotEnumerable)?;
    value_iteration(mdp, gamma, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{EpsilonGreedy, Policy};
    use crate::env::{
        EnvConfig, GridTrack, GridTrackConfig, MdpStep, MiniLander, MiniLanderConfig, StateVector, TerminalKind,
    };

    /// `next[s][a]` with `None` ending the episode.
    struct TableMdp {
        next: Vec<Vec<Option<usize>>>,
        reward: Vec<Vec<f64>>,
    }

    impl EnumerableMdp for TableMdp {
        fn num_states(&self) -> usize {
            self.next.len()
        }
        fn num_actions(&self) -> usize {
            self.next[0].len()
        }
        fn radices(&self) -> Vec<usize> {
            vec![self.next.len()]
        }
        fn is_live(&self, _: usize) -> bool {
            true
        }
        fn transition(&self, s: usize, a: usize) -> MdpStep {
            MdpStep { reward: self.reward[s][a], next: self.next[s][a] }
        }
        fn state_index(&self, s: &StateVector) -> Option<usize> {
            Some(s[0] as usize)
        }
        fn state_at(&self, i: usize) -> StateVector {
            StateVector(vec![i as f64])
        }
    }

    #[test]
    fn self_loop_geometric_series() {
        let mdp = TableMdp { next: vec![vec![Some(0)]], reward: vec![vec![1.0]] };
        let (q, _) = value_iteration(&mdp, 0.5f64, 1e-12).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() < 1e-11);
    }

    #[test]
    fn two_state_chain_undiscounted() {
        // 0 -> 1 -> goal, each step costs 1, the goal pays 1; action 1 stays put and costs 1.
        let mdp = TableMdp {
            next: vec![vec![Some(1), Some(0)], vec![None, Some(1)]],
            reward: vec![vec![-1.0, -1.0], vec![1.0, -1.0]],
        };
        let (q, report) = value_iteration(&mdp, 1.0f64, 1e-12).unwrap();
        assert_eq!(q.get(1, 0), 1.0);
        assert_eq!(q.get(0, 0), 0.0);
        assert_eq!(q.get(1, 1), 0.0);
        assert_eq!(q.get(0, 1), -1.0);
        assert!(report.sweeps <= 4);
    }

    #[test]
    fn residuals_never_increase() {
        let env = GridTrack::new(GridTrackConfig::default()).unwrap();
        let (_, report) = value_iteration_env(&env, 0.99f64, 1e-10).unwrap();
        for w in report.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn lander_is_rejected() {
        let env = MiniLander::new(MiniLanderConfig::default()).unwrap();
        assert!(matches!(value_iteration_env(&env, 0.99f64, 1e-6), Err(AgentError::NotEnumerable)));
    }

    #[test]
    fn greedy_grid_policy_reaches_goal() {
        let mut env = crate::env::make_env(&EnvConfig::GridTrack(GridTrackConfig::default())).unwrap();
        let (q, _) = value_iteration_env(env.as_ref(), 0.99f64, 1e-10).unwrap();
        let policy = EpsilonGreedy::greedy(&q);
        let mut s = env.reset(0);
        let mut kind = TerminalKind::None;
        while !kind.is_terminal() {
            let a = policy.distribution(&s).argmax();
            let out = env.step(a).unwrap();
            kind = out.terminal_kind;
            s = out.next_state;
        }
        assert_eq!(kind, TerminalKind::Success);
    }
}
