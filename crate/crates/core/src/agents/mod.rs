//! Model-free agents: DQN (double-Q and dueling options), REINFORCE with a
//! running-mean baseline, and DDPG over ranking vectors. All of them learn
//! from plain [`Transition`]s and never look at where the rewards came from,
//! so stabilized and observed batches go through the same code.

mod ddpg;
mod dqn;
mod features;
mod reinforce;
mod replay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Network, OptimizerConfig, SeededRng};

pub use ddpg::{actor_loss, critic_loss, ddpg_update, DdpgAgent, DdpgLosses, DdpgNets};
pub use dqn::{dqn_target, dqn_update, dueling_combine, epsilon_greedy, DqnAgent, QModel};
pub use features::Features;
pub use reinforce::{discounted_returns, reinforce_update, PolicyModel, ReinforceAgent};
pub use replay::{replay_sample, ReplayBuffer};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Index of the recommended item.
    Item(usize),
    /// Ranking vector in item-feature space; the environment shows its best match.
    Vector(Vec<f64>),
}

/// One interaction record `(s, a, r, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    /// Item actually shown to the user.
    pub item: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn item_action(&self) -> Result<usize> {
        match self.action {
            Action::Item(i) => Ok(i),
            Action::Vector(_) => Err(Error::config("discrete agent received a continuous action")),
        }
    }

    pub fn vector_action(&self) -> Result<&[f64]> {
        match &self.action {
            Action::Vector(w) => Ok(w),
            Action::Item(_) => Err(Error::config("continuous agent received a discrete action")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

/// A completed on-policy trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    pub terminal: bool,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dqn,
    Reinforce,
    Ddpg,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Dqn => "dqn",
            Family::Reinforce => "reinforce",
            Family::Ddpg => "ddpg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetSync {
    /// Copy online parameters every `every` updates.
    Hard { every: u64 },
    /// Polyak averaging `θ' ← τθ + (1−τ)θ'` after every update.
    Soft { tau: f64 },
}

/// Linear decay from `start` to `end` over `decay_episodes`, constant afterwards.
/// When `decay_episodes` is absent the decay spans 30% of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_episodes: Option<u64>,
}

impl LinearSchedule {
    pub fn value(&self, episode: u64, total_episodes: u64) -> f64 {
        let span = self
            .decay_episodes
            .unwrap_or_else(|| (total_episodes as f64 * 0.3).round() as u64);
        if span == 0 || episode >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * episode as f64 / span as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub family: Family,
    pub double_q: bool,
    pub dueling: bool,
    pub epsilon: LinearSchedule,
    /// DDPG exploration noise scale.
    pub action_noise: LinearSchedule,
    /// Defaults: hard copy every 100 updates (DQN), soft τ = 0.005 (DDPG).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sync: Option<TargetSync>,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Discount; inherits the environment's when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub replay_capacity: usize,
    /// Transitions stored before the first RL update; defaults to `batch_size`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_starts: Option<usize>,
    /// Environment steps between replay updates.
    pub update_every: usize,
    /// Q-network, policy or critic optimizer.
    pub optimizer: OptimizerConfig,
    /// DDPG actor optimizer; defaults to `optimizer`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_optimizer: Option<OptimizerConfig>,
    /// REINFORCE running-mean baseline decay.
    pub baseline_decay: f64,
    /// With shared embeddings, score (state, item) embedding pairs with one
    /// head; when off, the head maps the state embedding to one output per item.
    pub pair_scoring: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            family: Family::Dqn,
            double_q: true,
            dueling: false,
            epsilon: LinearSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: None,
            },
            action_noise: LinearSchedule {
                start: 0.2,
                end: 0.02,
                decay_episodes: None,
            },
            target_sync: None,
            batch_size: 64,
            hidden: vec![64, 64],
            gamma: None,
            replay_capacity: 10_000,
            learning_starts: None,
            update_every: 1,
            optimizer: OptimizerConfig::default(),
            actor_optimizer: None,
            baseline_decay: 0.95,
            pair_scoring: true,
        }
    }
}

impl AgentConfig {
    pub fn for_family(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn target_sync(&self) -> TargetSync {
        self.target_sync.unwrap_or(match self.family {
            Family::Ddpg => TargetSync::Soft { tau: 0.005 },
            _ => TargetSync::Hard { every: 100 },
        })
    }

    pub fn learning_starts(&self) -> usize {
        self.learning_starts.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("epsilon", &self.epsilon), ("action_noise", &self.action_noise)] {
            if !(0.0..=1.0).contains(&s.start) || !(0.0..=1.0).contains(&s.end) {
                return Err(Error::validation(name, "schedule values must lie in [0, 1]"));
            }
        }
        match self.target_sync() {
            TargetSync::Soft { tau } if !(tau > 0.0 && tau <= 1.0) => {
                return Err(Error::validation("target_sync", "tau must satisfy 0 < tau <= 1"));
            }
            TargetSync::Hard { every: 0 } => {
                return Err(Error::validation("target_sync", "hard sync period must be positive"));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("hidden", "layer sizes must be positive"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::validation("gamma", "must satisfy 0 <= gamma < 1"));
            }
        }
        if self.replay_capacity == 0 {
            return Err(Error::validation("replay_capacity", "must be positive"));
        }
        if self.update_every == 0 {
            return Err(Error::validation("update_every", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::validation("baseline_decay", "must lie in [0, 1)"));
        }
        self.optimizer.validate("optimizer")?;
        if let Some(o) = &self.actor_optimizer {
            o.validate("actor_optimizer")?;
        }
        Ok(())
    }
}

/// Network input sizes an agent is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentDims {
    /// Encoded state width.
    pub state_dim: usize,
    /// Encoded item width (pair-scoring heads and DDPG critic action input).
    pub item_dim: usize,
    /// Catalog size.
    pub num_items: usize,
    /// Raw continuous-action width (the item-feature dimension).
    pub action_dim: usize,
    /// Score (state, item) pairs with one head instead of one output per item.
    pub pair_scoring: bool,
}

/// `θ' ← τ·θ + (1−τ)·θ'`, elementwise.
pub fn soft_sync(target: &mut Network, online: &Network, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::config("target and online networks differ in shape"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::validation("tau", "must satisfy 0 < tau <= 1"));
    }
    if tau == 1.0 {
        target.params_mut().copy_from_slice(online.params());
        return Ok(());
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Exploration inputs for one action choice during training.
pub struct Exploration<'r> {
    pub episode: u64,
    pub total_episodes: u64,
    pub rng: &'r mut SeededRng,
}

#[derive(Debug, Clone)]
pub enum Agent {
    Dqn(DqnAgent),
    Reinforce(ReinforceAgent),
    Ddpg(DdpgAgent),
}

impl Agent {
    pub fn new(config: &AgentConfig, dims: AgentDims, gamma: f64, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let gamma = config.gamma.unwrap_or(gamma);
        Ok(match config.family {
            Family::Dqn => Agent::Dqn(DqnAgent::new(config, dims, gamma, rng)?),
            Family::Reinforce => Agent::Reinforce(ReinforceAgent::new(config, dims, gamma, rng)?),
            Family::Ddpg => Agent::Ddpg(DdpgAgent::new(config, dims, gamma, rng)?),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Agent::Dqn(_) => Family::Dqn,
            Agent::Reinforce(_) => Family::Reinforce,
            Agent::Ddpg(_) => Family::Ddpg,
        }
    }

    /// Chooses an action; `explore = None` gives the greedy evaluation policy.
    pub fn act(
        &self,
        config: &AgentConfig,
        state: &[f64],
        features: &Features<'_>,
        explore: Option<Exploration<'_>>,
    ) -> Result<Action> {
        match self {
            Agent::Dqn(a) => {
                let q = a.q_values(state, features)?;
                Ok(Action::Item(match explore {
                    Some(ex) => {
                        let eps = config.epsilon.value(ex.episode, ex.total_episodes);
                        epsilon_greedy(&q, eps, ex.rng)
                    }
                    None => crate::envsim::argmax(&q),
                }))
            }
            Agent::Reinforce(a) => Ok(Action::Item(match explore {
                Some(ex) => a.sample_action(state, features, ex.rng)?,
                None => a.greedy_action(state, features)?,
            })),
            Agent::Ddpg(a) => {
                let mut w = a.policy_action(state, features)?;
                if let Some(ex) = explore {
                    let sigma = config.action_noise.value(ex.episode, ex.total_episodes);
                    for v in w.iter_mut() {
                        *v += sigma * ex.rng.normal();
                    }
                }
                Ok(Action::Vector(w))
            }
        }
    }

    /// All parameters of every network the agent owns, concatenated.
    pub fn parameter_snapshot(&self) -> Vec<f64> {
        let nets: Vec<&Network> = match self {
            Agent::Dqn(a) => vec![a.online().network(), a.target().network()],
            Agent::Reinforce(a) => vec![a.policy().network()],
            Agent::Ddpg(a) => {
                let n = a.nets();
                vec![&n.actor, &n.critic, &n.target_actor, &n.target_critic]
            }
        };
        nets.iter().flat_map(|n| n.params().iter().copied()).collect()
    }
}
