//! Actor-critic agent over continuous ranking vectors.

use super::{soft_sync, AgentConfig, AgentDims, Features, TargetSync, Transition};
use crate::error::{Error, Result};
use crate::numkit::{Activation, Matrix, Network, Optimizer, OptimizerConfig, ParamGrads, SeededRng};

/// Actor `μ(s) ∈ [−1, 1]^d`, critic `Q(s, a)` over `concat(s, enc(a))`, and
/// their lagged copies.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgNets {
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
}

impl DdpgNets {
    pub fn new(dims: AgentDims, hidden: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let actor = Network::mlp(dims.state_dim, hidden, Activation::Relu, dims.action_dim, Activation::Tanh, rng)?;
        let critic = Network::mlp(
            dims.state_dim + dims.item_dim,
            hidden,
            Activation::Relu,
            1,
            Activation::Identity,
            rng,
        )?;
        Ok(Self::from_networks(actor, critic))
    }

    pub fn from_networks(actor: Network, critic: Network) -> Self {
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgLosses {
    pub critic_loss: f64,
    /// Mean `Q(s, μ(s))` before the actor step.
    pub actor_objective: f64,
}

/// `Q(s, a)` for encoded states and raw action vectors.
fn critic_values(critic: &Network, features: &Features<'_>, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
    let (enc, _) = features.encode_actions(actions)?;
    critic.predict(&states.hcat(&enc))
}

/// `mean (Q(s, a) − y)²` and its gradient w.r.t. the critic.
pub fn critic_loss(
    critic: &Network,
    features: &Features<'_>,
    states: &Matrix,
    actions: &Matrix,
    targets: &[f64],
) -> Result<(f64, ParamGrads)> {
    let b = states.rows();
    if targets.len() != b || actions.rows() != b {
        return Err(Error::config("batch fields disagree in length"));
    }
    let (enc, _) = features.encode_actions(actions)?;
    let (q, cache) = critic.forward(&states.hcat(&enc))?;
    let mut d = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for i in 0..b {
        let err = q.get(i, 0) - targets[i];
        loss += err * err;
        d.set(i, 0, 2.0 * err / b as f64);
    }
    let (g, _) = critic.backward(&cache, &d)?;
    Ok((loss / b as f64, g))
}

/// `−mean Q(s, μ(s))` and its gradient w.r.t. the actor, chaining the
/// critic's input gradient (and the item encoder's, when present) through `μ`.
pub fn actor_loss(
    actor: &Network,
    critic: &Network,
    features: &Features<'_>,
    states: &Matrix,
) -> Result<(f64, ParamGrads)> {
    let b = states.rows();
    let (mu, actor_cache) = actor.forward(states)?;
    let (enc, handle) = features.encode_actions(&mu)?;
    let (q, critic_cache) = critic.forward(&states.hcat(&enc))?;
    let objective = q.as_slice().iter().sum::<f64>() / b as f64;
    let d_q = Matrix::from_vec(b, 1, vec![-1.0 / b as f64; b]);
    let d_in = critic.input_gradient(&critic_cache, &d_q)?;
    let (_, d_enc) = d_in.hsplit(states.cols());
    let d_mu = features.action_gradient(handle.as_ref(), &d_enc)?;
    let (g, _) = actor.backward(&actor_cache, &d_mu)?;
    Ok((-objective, g))
}

/// Critic targets `r + γ·Q'(s', μ'(s'))`, or `r` for terminal transitions.
pub fn ddpg_target(batch: &[Transition], nets: &DdpgNets, features: &Features<'_>, gamma: f64) -> Result<Vec<f64>> {
    let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    if live.is_empty() || gamma == 0.0 {
        return Ok(y);
    }
    let rows: Vec<&Vec<f64>> = live.iter().map(|&i| &batch[i].next_state).collect();
    let next = features.encode_states(&Matrix::from_rows(&rows))?;
    let mu = nets.target_actor.predict(&next)?;
    let q = critic_values(&nets.target_critic, features, &next, &mu)?;
    for (row, &i) in live.iter().enumerate() {
        y[i] += gamma * q.get(row, 0);
    }
    Ok(y)
}

/// One critic step followed by one actor step. Target networks are left to the caller.
pub fn ddpg_update(
    batch: &[Transition],
    nets: &mut DdpgNets,
    features: &Features<'_>,
    gamma: f64,
    critic_optimizer: &mut Optimizer,
    actor_optimizer: &mut Optimizer,
) -> Result<DdpgLosses> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let y = ddpg_target(batch, nets, features, gamma)?;
    let rows: Vec<&Vec<f64>> = batch.iter().map(|t| &t.state).collect();
    let states = features.encode_states(&Matrix::from_rows(&rows))?;
    let actions = batch.iter().map(Transition::vector_action).collect::<Result<Vec<_>>>()?;
    let actions = Matrix::from_rows(&actions);
    let (c_loss, c_grads) = critic_loss(&nets.critic, features, &states, &actions, &y)?;
    if !c_loss.is_finite() {
        return Err(Error::NonFinite("ddpg critic loss".into()));
    }
    critic_optimizer.step(&mut nets.critic, &c_grads)?;
    let (a_loss, a_grads) = actor_loss(&nets.actor, &nets.critic, features, &states)?;
    if !a_loss.is_finite() {
        return Err(Error::NonFinite("ddpg actor objective".into()));
    }
    actor_optimizer.step(&mut nets.actor, &a_grads)?;
    Ok(DdpgLosses {
        critic_loss: c_loss,
        actor_objective: -a_loss,
    })
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    nets: DdpgNets,
    critic_optimizer: Optimizer,
    actor_optimizer: Optimizer,
    gamma: f64,
    sync: TargetSync,
    updates: u64,
}

impl DdpgAgent {
    pub fn new(config: &AgentConfig, dims: AgentDims, gamma: f64, rng: &mut SeededRng) -> Result<Self> {
        let nets = DdpgNets::new(dims, &config.hidden, rng)?;
        Ok(Self::from_parts(
            nets,
            config.optimizer,
            config.actor_optimizer.unwrap_or(config.optimizer),
            gamma,
            config.target_sync(),
        ))
    }

    pub fn from_parts(
        nets: DdpgNets,
        critic_optimizer: OptimizerConfig,
        actor_optimizer: OptimizerConfig,
        gamma: f64,
        sync: TargetSync,
    ) -> Self {
        Self {
            critic_optimizer: Optimizer::new(critic_optimizer, &nets.critic),
            actor_optimizer: Optimizer::new(actor_optimizer, &nets.actor),
            nets,
            gamma,
            sync,
            updates: 0,
        }
    }

    pub fn nets(&self) -> &DdpgNets {
        &self.nets
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Noise-free ranking vector `μ(s)`.
    pub fn policy_action(&self, state: &[f64], features: &Features<'_>) -> Result<Vec<f64>> {
        let s = features.encode_state(state)?;
        self.nets.actor.predict_one(&s)
    }

    pub fn update(&mut self, batch: &[Transition], features: &Features<'_>) -> Result<DdpgLosses> {
        let losses = ddpg_update(
            batch,
            &mut self.nets,
            features,
            self.gamma,
            &mut self.critic_optimizer,
            &mut self.actor_optimizer,
        )?;
        self.updates += 1;
        let n = &mut self.nets;
        match self.sync {
            TargetSync::Soft { tau } => {
                soft_sync(&mut n.target_actor, &n.actor, tau)?;
                soft_sync(&mut n.target_critic, &n.critic, tau)?;
            }
            TargetSync::Hard { every } => {
                if self.updates.is_multiple_of(every) {
                    n.target_actor = n.actor.clone();
                    n.target_critic = n.critic.clone();
                }
            }
        }
        Ok(losses)
    }
}
