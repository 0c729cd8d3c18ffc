//! Policy-gradient agent: REINFORCE with a running-mean baseline.

use super::dqn::{pair_inputs, pair_scores};
use super::{AgentConfig, AgentDims, Episode, Features};
use crate::envsim::argmax;
use crate::error::{Error, Result};
use crate::numkit::{softmax, Activation, Matrix, Network, Optimizer, OptimizerConfig, ParamGrads, SeededRng};

const LOG_FLOOR: f64 = -30.0;

/// `G_t = r_t + γ·G_{t+1}`, computed back to front.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Softmax policy over the catalog. Networks emit logits; the softmax is
/// applied outside so the log-probabilities stay exact.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyModel {
    Flat { net: Network },
    Pair { head: Network },
}

/// Objective value and gradient for one episode.
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub loss: f64,
    pub grads: ParamGrads,
    /// Selected actions whose log-probability fell below the floor.
    pub guard_hits: u64,
}

impl PolicyModel {
    pub fn new(dims: AgentDims, hidden: &[usize], rng: &mut SeededRng) -> Result<Self> {
        Ok(if dims.pair_scoring {
            PolicyModel::Pair {
                head: Network::mlp(
                    dims.state_dim + dims.item_dim,
                    hidden,
                    Activation::Relu,
                    1,
                    Activation::Identity,
                    rng,
                )?,
            }
        } else {
            PolicyModel::Flat {
                net: Network::mlp(dims.state_dim, hidden, Activation::Relu, dims.num_items, Activation::Identity, rng)?,
            }
        })
    }

    pub fn network(&self) -> &Network {
        match self {
            PolicyModel::Flat { net } => net,
            PolicyModel::Pair { head } => head,
        }
    }

    pub fn network_mut(&mut self) -> &mut Network {
        match self {
            PolicyModel::Flat { net } => net,
            PolicyModel::Pair { head } => head,
        }
    }

    pub fn logits(&self, state: &[f64], items: &Matrix) -> Result<Vec<f64>> {
        match self {
            PolicyModel::Flat { net } => net.predict_one(state),
            PolicyModel::Pair { head } => Ok(pair_scores(head, &Matrix::row_vector(state), items)?.into_vec()),
        }
    }

    pub fn probabilities(&self, state: &[f64], items: &Matrix) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state, items)?))
    }

    /// `−Σ_t A_t·log π(a_t|s_t)` over encoded states and its parameter gradient.
    pub fn objective(
        &self,
        states: &Matrix,
        actions: &[usize],
        advantages: &[f64],
        items: &Matrix,
    ) -> Result<PolicyGradient> {
        let t_len = states.rows();
        if actions.len() != t_len || advantages.len() != t_len {
            return Err(Error::config("episode fields disagree in length"));
        }
        let mut guard_hits = 0;
        let mut loss = 0.0;
        let mut term = |logits: &[f64], a: usize, adv: f64, d: &mut [f64]| {
            let pi = softmax(logits);
            let log_pi = pi[a].ln();
            if log_pi < LOG_FLOOR || !log_pi.is_finite() {
                guard_hits += 1;
                loss -= adv * LOG_FLOOR;
                return;
            }
            loss -= adv * log_pi;
            for (j, (dj, pj)) in d.iter_mut().zip(&pi).enumerate() {
                let onehot = if j == a { 1.0 } else { 0.0 };
                *dj = -adv * (onehot - pj);
            }
        };
        let grads = match self {
            PolicyModel::Flat { net } => {
                let (logits, cache) = net.forward(states)?;
                let mut d = Matrix::zeros(t_len, logits.cols());
                for t in 0..t_len {
                    term(logits.row(t), actions[t], advantages[t], d.row_mut(t));
                }
                net.backward(&cache, &d)?.0
            }
            PolicyModel::Pair { head } => {
                let m = items.rows();
                let all: Vec<usize> = (0..m).collect();
                let mut x = Matrix::zeros(t_len * m, states.cols() + items.cols());
                for t in 0..t_len {
                    let block = pair_inputs(&Matrix::from_vec(m, states.cols(), states.row(t).repeat(m)), items, &all);
                    for j in 0..m {
                        x.row_mut(t * m + j).copy_from_slice(block.row(j));
                    }
                }
                let (out, cache) = head.forward(&x)?;
                let logits = Matrix::from_vec(t_len, m, out.into_vec());
                let mut d = Matrix::zeros(t_len, m);
                for t in 0..t_len {
                    term(logits.row(t), actions[t], advantages[t], d.row_mut(t));
                }
                head.backward(&cache, &Matrix::from_vec(t_len * m, 1, d.into_vec()))?.0
            }
        };
        Ok(PolicyGradient {
            loss,
            grads,
            guard_hits,
        })
    }
}

/// Exponential running mean of returns, kept separately for each step
/// position so late steps (which have shorter horizons) are not compared
/// against full-episode returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningBaseline {
    values: Vec<f64>,
    decay: f64,
}

impl RunningBaseline {
    pub fn new(decay: f64) -> Self {
        Self {
            values: Vec::new(),
            decay,
        }
    }

    pub fn with_values(values: Vec<f64>, decay: f64) -> Self {
        Self { values, decay }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Baseline for each position of `returns`; an unseen position uses its
    /// own return, giving a zero advantage.
    pub fn baseline_for(&self, returns: &[f64]) -> Vec<f64> {
        returns
            .iter()
            .enumerate()
            .map(|(t, g)| self.values.get(t).copied().unwrap_or(*g))
            .collect()
    }

    pub fn observe(&mut self, returns: &[f64]) {
        for (t, g) in returns.iter().enumerate() {
            match self.values.get_mut(t) {
                Some(b) => *b = self.decay * *b + (1.0 - self.decay) * g,
                None => self.values.push(*g),
            }
        }
    }
}

/// Outcome of one REINFORCE update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceLoss {
    pub loss: f64,
    pub guard_hits: u64,
}

/// One optimizer step on `−Σ_t (G_t − b_t)·log π(a_t|s_t)`, then the baseline
/// absorbs the episode's returns.
pub fn reinforce_update(
    episode: &Episode,
    policy: &mut PolicyModel,
    features: &Features<'_>,
    gamma: f64,
    optimizer: &mut Optimizer,
    baseline: &mut RunningBaseline,
) -> Result<ReinforceLoss> {
    if episode.is_empty() {
        return Err(Error::Usage("empty episode".into()));
    }
    let returns = discounted_returns(&episode.rewards(), gamma);
    let advantages: Vec<f64> = returns
        .iter()
        .zip(baseline.baseline_for(&returns))
        .map(|(g, b)| g - b)
        .collect();
    let raw: Vec<&Vec<f64>> = episode.steps.iter().map(|s| &s.state).collect();
    let states = features.encode_states(&Matrix::from_rows(&raw))?;
    let actions: Vec<usize> = episode.steps.iter().map(|s| s.action).collect();
    let pg = policy.objective(&states, &actions, &advantages, features.items())?;
    if !pg.loss.is_finite() {
        return Err(Error::NonFinite("reinforce objective".into()));
    }
    optimizer.step(policy.network_mut(), &pg.grads)?;
    baseline.observe(&returns);
    Ok(ReinforceLoss {
        loss: pg.loss,
        guard_hits: pg.guard_hits,
    })
}

#[derive(Debug, Clone)]
pub struct ReinforceAgent {
    policy: PolicyModel,
    optimizer: Optimizer,
    baseline: RunningBaseline,
    gamma: f64,
    guard_hits: u64,
}

impl ReinforceAgent {
    pub fn new(config: &AgentConfig, dims: AgentDims, gamma: f64, rng: &mut SeededRng) -> Result<Self> {
        let policy = PolicyModel::new(dims, &config.hidden, rng)?;
        Ok(Self::from_parts(policy, config.optimizer, gamma, config.baseline_decay))
    }

    pub fn from_parts(policy: PolicyModel, optimizer: OptimizerConfig, gamma: f64, baseline_decay: f64) -> Self {
        let optimizer = Optimizer::new(optimizer, policy.network());
        Self {
            policy,
            optimizer,
            baseline: RunningBaseline::new(baseline_decay),
            gamma,
            guard_hits: 0,
        }
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn baseline(&self) -> &RunningBaseline {
        &self.baseline
    }

    /// Log-probability guard activations so far.
    pub fn guard_hits(&self) -> u64 {
        self.guard_hits
    }

    pub fn probabilities(&self, state: &[f64], features: &Features<'_>) -> Result<Vec<f64>> {
        let s = features.encode_state(state)?;
        self.policy.probabilities(&s, features.items())
    }

    /// Draws from `π(·|s)` by inverting the cumulative distribution.
    pub fn sample_action(&self, state: &[f64], features: &Features<'_>, rng: &mut SeededRng) -> Result<usize> {
        let p = self.probabilities(state, features)?;
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(p.len() - 1)
    }

    pub fn greedy_action(&self, state: &[f64], features: &Features<'_>) -> Result<usize> {
        let s = features.encode_state(state)?;
        Ok(argmax(&self.policy.logits(&s, features.items())?))
    }

    pub fn update(&mut self, episode: &Episode, features: &Features<'_>) -> Result<f64> {
        let out = reinforce_update(
            episode,
            &mut self.policy,
            features,
            self.gamma,
            &mut self.optimizer,
            &mut self.baseline,
        )?;
        self.guard_hits += out.guard_hits;
        Ok(out.loss)
    }
}
