//! Training and evaluation protocol: the episode loop with optional reward
//! stabilization, periodic greedy evaluation, sample efficiency, seed
//! aggregation and parallel replication.

mod stats;
mod tabular;

use serde::{Deserialize, Serialize};

use crate::agents::{
    Action, Agent, AgentConfig, AgentDims, Episode, EpisodeStep, Exploration, Family, Features, ReplayBuffer,
    Transition,
};
use crate::envsim::{Env, EnvConfig, EnvState, RewardMode};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, Matrix, SeededRng};
use crate::stabilize::{stabilize_batch, EmbeddingMode, EstimatorConfig, RewardEstimator, RewardModel, RewardSource};

pub use tabular::{fit_tabular_dqn, TabularDqnConfig};
pub use stats::{
    aggregate, aggregate_attainment, median_with_never, sample_efficiency, AggregateResult, EfficiencyResult,
};

/// Independent random streams of one run.
mod stream {
    pub const AGENT_INIT: u64 = 1;
    pub const ESTIMATOR_INIT: u64 = 2;
    pub const EPISODES: u64 = 3;
    pub const EXPLORATION: u64 = 4;
    pub const REPLAY: u64 = 5;
    pub const ESTIMATOR_BATCHES: u64 = 6;
    pub const EVALUATION: u64 = 7;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub estimator: EstimatorConfig,
    pub reward_source: RewardSource,
    pub embedding_mode: EmbeddingMode,
    pub reward_mode: RewardMode,
    pub episodes: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            estimator: EstimatorConfig::default(),
            reward_source: RewardSource::Observed,
            embedding_mode: EmbeddingMode::Separate,
            reward_mode: RewardMode::Stochastic,
            episodes: 3000,
            eval_period: 10,
            eval_episodes: 100,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.estimator.validate()?;
        if self.eval_period == 0 {
            return Err(Error::validation("eval_period", "must be at least 1"));
        }
        if self.episodes < self.eval_period {
            return Err(Error::validation("episodes", "must be at least eval_period"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::validation("eval_episodes", "must be at least 1"));
        }
        Ok(())
    }

    /// Whether a supervised estimator is trained alongside the agent.
    pub fn uses_estimator(&self) -> bool {
        self.reward_source == RewardSource::Estimated || self.embedding_mode == EmbeddingMode::SharedSupervised
    }

    /// Stable 64-bit FNV-1a digest of the configuration, excluding the seed.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let text = serde_json::to_string(&c).expect("run configs serialize");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTimeline {
    pub seed: u64,
    pub config_digest: String,
    pub points: Vec<EvalPoint>,
    /// Set when training stopped on a non-finite loss; the timeline ends there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

impl MetricsTimeline {
    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    /// Mean score of the last `window` points (fewer if the timeline is shorter).
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        let n = self.points.len().min(window);
        if n == 0 {
            return None;
        }
        Some(self.points[self.points.len() - n..].iter().map(|p| p.score).sum::<f64>() / n as f64)
    }
}

/// What the RL learner was fed on one update.
#[derive(Debug, Clone, Copy)]
pub enum UpdateInput<'a> {
    Batch(&'a [Transition]),
    Episode(&'a Episode),
}

/// Extra wiring for [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Replaces the learned estimator.
    pub reward_model: Option<Box<dyn RewardModel + 'a>>,
    /// Called with every RL update input, in order.
    pub observer: Option<&'a mut dyn FnMut(u64, UpdateInput<'_>)>,
}

/// Runs one configuration to completion.
pub fn train(config: &RunConfig) -> Result<MetricsTimeline> {
    train_with(config, TrainOptions::default())
}

fn agent_dims(config: &RunConfig, env: &Env, model: Option<&dyn RewardModel>) -> Result<AgentDims> {
    let shared = config.embedding_mode == EmbeddingMode::SharedSupervised;
    let (state_dim, item_dim) = if shared {
        let e = model
            .and_then(|m| m.embedder())
            .ok_or_else(|| Error::config("shared embeddings need an estimator with towers"))?;
        (e.embedding_dim(), e.embedding_dim())
    } else {
        (env.state_dim(), env.item_dim())
    };
    Ok(AgentDims {
        state_dim,
        item_dim,
        num_items: env.num_items(),
        action_dim: env.item_dim(),
        pair_scoring: shared && config.agent.pair_scoring,
    })
}

fn features<'m>(env: &'m Env, model: Option<&'m dyn RewardModel>, items: &'m Option<Matrix>) -> Features<'m> {
    match (model.and_then(|m| m.embedder()), items) {
        (Some(e), Some(emb)) => Features::shared(e, emb),
        _ => Features::raw(env.catalog()),
    }
}

fn refresh_items(config: &RunConfig, env: &Env, model: Option<&dyn RewardModel>) -> Result<Option<Matrix>> {
    if config.embedding_mode != EmbeddingMode::SharedSupervised {
        return Ok(None);
    }
    match model.and_then(|m| m.embedder()) {
        Some(e) => Ok(Some(e.embed_items(env.catalog())?)),
        None => Err(Error::config("shared embeddings need an estimator with towers")),
    }
}

fn env_step(env: &Env, state: &EnvState, action: &Action, mode: RewardMode) -> Result<crate::envsim::StepOutcome> {
    match action {
        Action::Item(i) => env.step(state, *i, mode),
        Action::Vector(w) => env.continuous_step(state, w, mode),
    }
}

/// Item the greedy (exploration-free) policy recommends.
fn greedy_item(agent: &Agent, cfg: &AgentConfig, env: &Env, state: &EnvState, f: &Features<'_>) -> Result<usize> {
    match agent.act(cfg, &state.features(), f, None)? {
        Action::Item(i) => Ok(i),
        Action::Vector(w) => env.select_item(&w),
    }
}

/// Mean summed observed reward of the greedy policy over `n` stochastic-mode
/// episodes seeded from `eval_seed`. Reads the agent only.
pub fn evaluate(
    agent: &Agent,
    agent_config: &AgentConfig,
    env: &Env,
    features: &Features<'_>,
    n: usize,
    eval_seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::validation("eval_episodes", "must be at least 1"));
    }
    let mut total = 0.0;
    for ep in 0..n {
        let mut state = env.reset(derive_seed(eval_seed, ep as u64));
        loop {
            let item = greedy_item(agent, agent_config, env, &state, features)?;
            let out = env.step(&state, item, RewardMode::Stochastic)?;
            total += out.reward;
            if out.done {
                break;
            }
            state = out.next_state;
        }
    }
    Ok(total / n as f64)
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// [`train`] with an optional reward-model override and update observer.
pub fn train_with(config: &RunConfig, mut options: TrainOptions<'_>) -> Result<MetricsTimeline> {
    config.validate()?;
    let env = Env::new(config.env.clone())?;
    let root = SeededRng::new(config.seed);
    let mut model: Option<Box<dyn RewardModel + '_>> = match options.reward_model.take() {
        Some(m) => Some(m),
        None if config.uses_estimator() => Some(Box::new(RewardEstimator::new(
            env.state_dim(),
            env.item_dim(),
            config.embedding_mode,
            &config.estimator,
            &mut root.derive(stream::ESTIMATOR_INIT),
        )?)),
        None => None,
    };
    let mut item_emb = refresh_items(config, &env, model.as_deref())?;
    let dims = agent_dims(config, &env, model.as_deref())?;
    let acfg = &config.agent;
    let mut agent = Agent::new(acfg, dims, env.config().gamma, &mut root.derive(stream::AGENT_INIT))?;

    let episode_seed = root.derive(stream::EPISODES).seed();
    let eval_seed = root.derive(stream::EVALUATION).seed();
    let mut explore_rng = root.derive(stream::EXPLORATION);
    let mut replay_rng = root.derive(stream::REPLAY);
    let mut est_rng = root.derive(stream::ESTIMATOR_BATCHES);

    let mut buffer = ReplayBuffer::new(acfg.replay_capacity);
    let mut timeline = MetricsTimeline {
        seed: config.seed,
        config_digest: config.digest(),
        points: Vec::new(),
        diverged: None,
    };
    let mut env_steps: u64 = 0;
    let mut updates: u64 = 0;
    let on_policy = agent.family() == Family::Reinforce;
    let est_batch = config.estimator.batch_size;

    let result: Result<()> = (|| {
        for ep in 0..config.episodes {
            let mut state = env.reset(derive_seed(episode_seed, ep));
            let mut trajectory: Vec<Transition> = Vec::new();
            loop {
                let obs = state.features();
                let action = {
                    let f = features(&env, model.as_deref(), &item_emb);
                    agent.act(
                        acfg,
                        &obs,
                        &f,
                        Some(Exploration {
                            episode: ep,
                            total_episodes: config.episodes,
                            rng: &mut explore_rng,
                        }),
                    )?
                };
                let out = env_step(&env, &state, &action, config.reward_mode)?;
                let t = Transition {
                    state: obs,
                    action,
                    item: out.item,
                    reward: out.reward,
                    next_state: out.next_state.features(),
                    done: out.done,
                };
                buffer.push(t.clone());
                if on_policy {
                    trajectory.push(t);
                }
                env_steps += 1;
                if let Some(m) = model.as_deref_mut() {
                    if buffer.total_pushed() == config.estimator.warmup as u64 && m.needs_warmup() {
                        for _ in 0..config.estimator.pretrain_steps {
                            let idx = buffer.sample_indices(est_batch, &mut est_rng)?;
                            let batch: Vec<Transition> = idx.iter().map(|&i| buffer.get(i).clone()).collect();
                            m.train(&batch, env.catalog())?;
                        }
                        item_emb = refresh_items(config, &env, Some(m))?;
                    }
                }

                if env_steps.is_multiple_of(acfg.update_every as u64) {
                    if let Some(m) = model.as_deref_mut() {
                        if buffer.len() >= est_batch {
                            let idx = buffer.sample_indices(est_batch, &mut est_rng)?;
                            let batch: Vec<Transition> = idx.iter().map(|&i| buffer.get(i).clone()).collect();
                            m.train(&batch, env.catalog())?;
                            item_emb = refresh_items(config, &env, Some(m))?;
                        }
                    }
                    if !on_policy && buffer.len() >= acfg.learning_starts() {
                        let idx = buffer.sample_indices(acfg.batch_size, &mut replay_rng)?;
                        let raw: Vec<Transition> = idx.iter().map(|&i| buffer.get(i).clone()).collect();
                        let batch = stabilized(config, model.as_deref(), &buffer, &env, raw)?;
                        if let Some(obs) = options.observer.as_deref_mut() {
                            obs(updates, UpdateInput::Batch(&batch));
                        }
                        let f = features(&env, model.as_deref(), &item_emb);
                        match &mut agent {
                            Agent::Dqn(a) => {
                                a.update(&batch, &f)?;
                            }
                            Agent::Ddpg(a) => {
                                a.update(&batch, &f)?;
                            }
                            Agent::Reinforce(_) => unreachable!("on-policy agents learn from episodes"),
                        }
                        updates += 1;
                    }
                }
                if out.done {
                    break;
                }
                state = out.next_state;
            }
            if on_policy {
                let trajectory = stabilized(config, model.as_deref(), &buffer, &env, trajectory)?;
                let episode = Episode {
                    steps: trajectory
                        .iter()
                        .map(|t| {
                            Ok(EpisodeStep {
                                state: t.state.clone(),
                                action: t.item_action()?,
                                reward: t.reward,
                            })
                        })
                        .collect::<Result<_>>()?,
                    terminal: true,
                };
                if let Some(obs) = options.observer.as_deref_mut() {
                    obs(updates, UpdateInput::Episode(&episode));
                }
                let f = features(&env, model.as_deref(), &item_emb);
                if let Agent::Reinforce(a) = &mut agent {
                    a.update(&episode, &f)?;
                }
                updates += 1;
            }
            if (ep + 1) % config.eval_period == 0 {
                let f = features(&env, model.as_deref(), &item_emb);
                let score = evaluate(&agent, acfg, &env, &f, config.eval_episodes, eval_seed)?;
                timeline.points.push(EvalPoint { episode: ep + 1, score });
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(timeline),
        Err(e) if is_divergence(&e) => {
            timeline.diverged = Some(e.to_string());
            Ok(timeline)
        }
        Err(e) => Err(e),
    }
}

/// Applies reward stabilization when the run asks for it and the estimator is past warm-up.
fn stabilized(
    config: &RunConfig,
    model: Option<&dyn RewardModel>,
    buffer: &ReplayBuffer,
    env: &Env,
    batch: Vec<Transition>,
) -> Result<Vec<Transition>> {
    let Some(m) = model else {
        return Ok(batch);
    };
    if config.reward_source != RewardSource::Estimated {
        return Ok(batch);
    }
    if m.needs_warmup() && (buffer.total_pushed() as usize) < config.estimator.warmup {
        return Ok(batch);
    }
    Ok(stabilize_batch(&batch, m, env.catalog())?.into_transitions())
}

/// Outcome of one (configuration, seed) run inside a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<MetricsTimeline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.timeline.as_ref().is_some_and(|t| t.diverged.is_some())
    }
}

/// Executes every template at every seed on a pool of `parallelism` threads.
/// Records come back in (template, seed) order whatever the scheduling.
pub fn run_suite(templates: &[RunConfig], seeds: &[u64], parallelism: usize) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;
    if templates.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("suite needs at least one configuration and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..templates.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let config = RunConfig {
                    seed,
                    ..templates[c].clone()
                };
                match train(&config) {
                    Ok(t) => RunRecord {
                        config_index: c,
                        seed,
                        timeline: Some(t),
                        error: None,
                    },
                    Err(e) => RunRecord {
                        config_index: c,
                        seed,
                        timeline: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    }))
}

/// Desk-scale sample-efficiency threshold: `fraction × oracle-greedy return`
/// over a fixed set of evaluation episodes.
pub fn relative_threshold(env: &EnvConfig, fraction: f64) -> Result<f64> {
    let env = Env::new(env.clone())?;
    Ok(fraction * env.oracle_greedy_return(2000, 0x5eed)?)
}

/// Per-template summary of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub config_index: usize,
    pub final_score: Option<AggregateResult>,
    pub efficiency: Option<AggregateResult>,
    pub median_efficiency: Option<f64>,
    pub failures: usize,
}

/// Aggregates final-window scores (last `window` points) and episodes to
/// the `k`-th attainment of `threshold` for every template.
pub fn summarize(records: &[RunRecord], templates: usize, window: usize, threshold: f64, k: usize) -> Vec<SuiteSummary> {
    (0..templates)
        .map(|c| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.config_index == c).collect();
            let timelines: Vec<&MetricsTimeline> = runs.iter().filter_map(|r| r.timeline.as_ref()).collect();
            let finals: Vec<f64> = timelines.iter().filter_map(|t| t.final_window_mean(window)).collect();
            let eff: Vec<Option<f64>> = timelines
                .iter()
                .map(|t| sample_efficiency(t, threshold, k).episodes.map(|e| e as f64))
                .collect();
            SuiteSummary {
                config_index: c,
                final_score: aggregate(&finals).ok(),
                efficiency: aggregate_attainment(&eff).ok(),
                median_efficiency: median_with_never(&eff),
                failures: runs.iter().filter(|r| r.failed()).count(),
            }
        })
        .collect()
}
