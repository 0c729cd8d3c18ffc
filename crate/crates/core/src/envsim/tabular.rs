//! Finite MDPs and their exact optimal action values.

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

/// Finite MDP with mean rewards in `[0, 1]`. Entering a terminal state ends
/// the episode, so terminal states contribute no future value.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `R[s][a]`, flattened.
    rewards: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        terminal_states: &[usize],
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 || rewards.len() != n_states {
            return Err(Error::config("transition and reward tables must cover the same states"));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::config("at least one action required"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::validation("gamma", "must satisfy 0 <= gamma < 1"));
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            if transitions[s].len() != n_actions || rewards[s].len() != n_actions {
                return Err(Error::config(format!("state {s} has a ragged action table")));
            }
            for a in 0..n_actions {
                let row = &transitions[s][a];
                if row.len() != n_states {
                    return Err(Error::config(format!("P[{s}][{a}] has wrong length")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::config(format!("P[{s}][{a}] is not a distribution")));
                }
                let r = rewards[s][a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::config(format!("R[{s}][{a}] = {r} outside [0, 1]")));
                }
                flat_p.extend_from_slice(row);
                flat_r.push(r);
            }
        }
        let mut terminal = vec![false; n_states];
        for &t in terminal_states {
            *terminal
                .get_mut(t)
                .ok_or_else(|| Error::config(format!("terminal state {t} out of range")))? = true;
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions: flat_p,
            rewards: flat_r,
            gamma,
            terminal,
        })
    }

    /// Random dense MDP without terminal states.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let mut p = Vec::with_capacity(n_states);
        let mut r = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut ps = Vec::with_capacity(n_actions);
            let mut rs = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let raw: Vec<f64> = (0..n_states).map(|_| rng.uniform() + 0.05).collect();
                let total: f64 = raw.iter().sum();
                let mut row: Vec<f64> = raw.iter().map(|v| v / total).collect();
                // push the rounding residue into the last entry so the row sums to 1
                let head: f64 = row[..n_states - 1].iter().sum();
                row[n_states - 1] = 1.0 - head;
                ps.push(row);
                rs.push(rng.uniform());
            }
            p.push(ps);
            r.push(rs);
        }
        Self::new(p, r, gamma, &[])
    }

    /// The fixed 3-state, 2-action MDP used for tabular DQN checks.
    ///
    /// Action 0 is myopically better in states 0 and 1, while action 1 moves
    /// the process toward state 2 where rewards are highest.
    pub fn micro(gamma: f64) -> Self {
        Self::new(
            vec![
                vec![vec![0.8, 0.2, 0.0], vec![0.1, 0.3, 0.6]],
                vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.2, 0.8]],
                vec![vec![0.3, 0.0, 0.7], vec![0.6, 0.0, 0.4]],
            ],
            vec![vec![0.6, 0.2], vec![0.5, 0.1], vec![0.9, 0.4]],
            gamma,
            &[],
        )
        .expect("micro MDP is well formed")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.n_actions + a) * self.n_states;
        &self.transitions[o..o + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Draws `s' ~ P[s][a]`.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        let row = self.transition(s, a);
        for (next, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(self.n_states - 1)
    }

    /// One application of the Bellman optimality operator.
    pub fn bellman_backup(&self, q: &QTable) -> QTable {
        let v: Vec<f64> = (0..self.n_states)
            .map(|s| if self.terminal[s] { 0.0 } else { q.max(s) })
            .collect();
        let mut out = QTable::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let future: f64 = self.transition(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                out.set(s, a, self.reward(s, a) + self.gamma * future);
            }
        }
        out
    }

    /// Sup-norm distance between `q` and its Bellman backup.
    pub fn bellman_residual(&self, q: &QTable) -> f64 {
        self.bellman_backup(q).sup_distance(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Optimal action values by repeated Bellman backups, stopped once the
/// sup-norm residual of the returned table is at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::validation("tol", "must be positive"));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    loop {
        let next = mdp.bellman_backup(&q);
        let delta = next.sup_distance(&q);
        q = next;
        // residual of the new table is at most gamma * delta
        if mdp.gamma() * delta <= tol {
            return Ok(q);
        }
    }
}
