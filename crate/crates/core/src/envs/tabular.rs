use crate::error::{Error, Result};

/// Finite MDP with explicit transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[(s * n_actions + a) * n_states + s']`
    pub transitions: Vec<f64>,
    /// `rewards[s * n_actions + a]`
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::Shape {
                expected: format!("{} transition entries", n_states * n_actions * n_states),
                got: transitions.len().to_string(),
            });
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::Shape {
                expected: format!("{} rewards", n_states * n_actions),
                got: rewards.len().to_string(),
            });
        }
        let mdp = Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row: f64 = mdp.next_state_probs(s, a).iter().sum();
                if (row - 1.0).abs() > 1e-12 {
                    return Err(Error::Input(format!(
                        "transition row ({s}, {a}) sums to {row}"
                    )));
                }
            }
        }
        Ok(mdp)
    }

    /// Five-state chain with a small reward at the left end and a large,
    /// harder-to-reach reward at the right end.
    pub fn chain() -> Self {
        const N: usize = 5;
        let mut transitions = vec![0.0; N * 2 * N];
        let mut rewards = vec![0.0; N * 2];
        for s in 0..N {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(N - 1);
            // action 0: drift left, reliably
            let row = &mut transitions[(s * 2) * N..(s * 2 + 1) * N];
            row[left] += 0.9;
            row[s] += 0.1;
            // action 1: push right against a current
            let row = &mut transitions[(s * 2 + 1) * N..(s * 2 + 2) * N];
            row[right] += 0.6;
            row[s] += 0.3;
            row[left] += 0.1;
        }
        rewards[0] = 0.05;
        rewards[(N - 1) * 2 + 1] = 1.0;
        Self::new(N, 2, transitions, rewards, 0.99).expect("chain MDP is well formed")
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }
}

/// Optimal action values by value iteration, stopped once successive
/// iterates differ by less than `tol` in sup norm. Indexed `[s][a]`.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<Vec<Vec<f64>>> {
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Input(format!("value iteration needs gamma in [0, 1), got {gamma}")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0f64;
        let mut next = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            for a in 0..na {
                let expected: f64 = mdp
                    .next_state_probs(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, v)| p * v)
                    .sum();
                next[s][a] = mdp.reward(s, a) + gamma * expected;
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
}
