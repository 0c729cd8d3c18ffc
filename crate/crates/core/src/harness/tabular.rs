use serde::{Deserialize, Serialize};

use crate::agents::{Action, AgentDims, DqnAgent, Features, QModel, ReplayBuffer, TargetSync, Transition};
use crate::envsim::{QTable, TabularMdp};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Optimizer, OptimizerConfig, SeededRng};

/// Settings for fitting a DQN to a finite MDP with one-hot states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularDqnConfig {
    pub double_q: bool,
    /// Sampled transitions stored per (state, action) pair.
    pub samples_per_pair: usize,
    pub batch_size: usize,
    pub updates: u64,
    pub sync_every: u64,
    pub optimizer: OptimizerConfig,
    /// Learning rate reached by linear decay at the last update.
    pub final_learning_rate: f64,
    pub seed: u64,
}

impl Default for TabularDqnConfig {
    fn default() -> Self {
        Self {
            double_q: false,
            samples_per_pair: 20_000,
            batch_size: 256,
            updates: 30_000,
            sync_every: 200,
            optimizer: OptimizerConfig::adam(0.01),
            final_learning_rate: 1e-4,
            seed: 0,
        }
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Trains a linear DQN on uniformly collected experience and returns its
/// Q-table. Rewards are the deterministic means `R[s][a]`.
pub fn fit_tabular_dqn(mdp: &TabularMdp, cfg: &TabularDqnConfig) -> Result<QTable> {
    if cfg.samples_per_pair == 0 || cfg.batch_size == 0 || cfg.sync_every == 0 {
        return Err(Error::config("samples_per_pair, batch_size and sync_every must be positive"));
    }
    cfg.optimizer.validate("optimizer")?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let root = SeededRng::new(cfg.seed);
    let mut data_rng = root.derive(1);
    let mut batch_rng = root.derive(2);

    let mut buffer = ReplayBuffer::new(ns * na * cfg.samples_per_pair);
    for s in 0..ns {
        for a in 0..na {
            for _ in 0..cfg.samples_per_pair {
                let next = mdp.sample_next(s, a, &mut data_rng);
                buffer.push(Transition {
                    state: one_hot(ns, s),
                    action: Action::Item(a),
                    item: a,
                    reward: mdp.reward(s, a),
                    next_state: one_hot(ns, next),
                    done: mdp.is_terminal(next),
                });
            }
        }
    }

    let dims = AgentDims {
        state_dim: ns,
        item_dim: 1,
        num_items: na,
        action_dim: 1,
        pair_scoring: false,
    };
    let model = QModel::new(dims, &[], false, &mut root.derive(3))?;
    let optimizer = Optimizer::new(cfg.optimizer, model.network());
    let mut agent = DqnAgent::from_parts(
        model,
        optimizer,
        mdp.gamma(),
        cfg.double_q,
        TargetSync::Hard { every: cfg.sync_every },
    );
    let items = Matrix::zeros(na, 1);
    let features = Features::raw(&items);
    let lr0 = cfg.optimizer.learning_rate;
    for u in 0..cfg.updates {
        let frac = u as f64 / cfg.updates.max(1) as f64;
        agent.optimizer_mut().set_learning_rate(lr0 + (cfg.final_learning_rate - lr0) * frac);
        let idx = buffer.sample_indices(cfg.batch_size, &mut batch_rng)?;
        let batch: Vec<Transition> = idx.iter().map(|&i| buffer.get(i).clone()).collect();
        agent.update(&batch, &features)?;
    }

    let mut q = QTable::zeros(ns, na);
    for s in 0..ns {
        for (a, v) in agent.q_values(&one_hot(ns, s), &features)?.into_iter().enumerate() {
            q.set(s, a, v);
        }
    }
    Ok(q)
}
