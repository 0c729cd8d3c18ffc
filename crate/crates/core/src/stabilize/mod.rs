//! Reward stabilization: a supervised estimate of `E[r | s, a]` replaces the
//! observed reward in every batch handed to the RL learner. The estimator
//! optionally owns user/item towers that the RL model reads but never trains.

mod embed;

use serde::{Deserialize, Serialize};

use crate::agents::Transition;
use crate::envsim::purchase_probability;
use crate::error::{Error, Result};
use crate::numkit::{Activation, Matrix, Network, Optimizer, OptimizerConfig, ParamGrads, SeededRng};

pub use embed::{Route, SharedEmbedder, SharedOutput, TowerBackward, TowerConfig, TowerHandle, TowerOptimizer};

const PROB_CLAMP: f64 = 1e-7;

/// Which reward the RL update consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    Observed,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// RL model and estimator each read raw features.
    Separate,
    /// Both read the estimator's towers; only the supervised loss trains them.
    SharedSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Observed,
    Stabilized,
}

/// A batch of transitions that knows where its rewards came from.
pub trait RewardBatch {
    fn transitions(&self) -> &[Transition];
    fn provenance(&self) -> Provenance;
}

impl RewardBatch for [Transition] {
    fn transitions(&self) -> &[Transition] {
        self
    }

    fn provenance(&self) -> Provenance {
        Provenance::Observed
    }
}

impl RewardBatch for Vec<Transition> {
    fn transitions(&self) -> &[Transition] {
        self
    }

    fn provenance(&self) -> Provenance {
        Provenance::Observed
    }
}

/// Transitions whose rewards were replaced by estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedBatch {
    transitions: Vec<Transition>,
}

impl StabilizedBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn into_transitions(self) -> Vec<Transition> {
        self.transitions
    }
}

impl RewardBatch for StabilizedBatch {
    fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    fn provenance(&self) -> Provenance {
        Provenance::Stabilized
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Transitions collected before stabilized rewards are used.
    pub warmup: usize,
    /// Extra updates run on the buffer once warm-up completes.
    pub pretrain_steps: usize,
    /// Towers used when embeddings are shared.
    pub tower: TowerConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            warmup: 500,
            pretrain_steps: 500,
            tower: TowerConfig::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::validation("estimator.hidden", "layer sizes must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("estimator.batch_size", "must be positive"));
        }
        self.optimizer.validate("estimator.optimizer")?;
        self.tower.validate()
    }
}

/// Anything that can stand in for `E[r | s, a]`.
pub trait RewardModel {
    /// Estimates for paired rows of state features and item features.
    fn estimate_batch(&self, states: &Matrix, items: &Matrix) -> Result<Vec<f64>>;
    /// One supervised step on observed rewards; returns the loss.
    fn train(&mut self, batch: &dyn RewardBatch, catalog: &Matrix) -> Result<f64>;
    /// Whether stabilized rewards must wait for a warm-up period.
    fn needs_warmup(&self) -> bool {
        true
    }
    fn embedder(&self) -> Option<&SharedEmbedder> {
        None
    }
}

/// Gathers `(state, item features, reward)` rows from transitions.
pub fn supervised_examples(batch: &[Transition], catalog: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
    if batch.is_empty() {
        return Ok((Matrix::zeros(0, 0), Matrix::zeros(0, catalog.cols()), Vec::new()));
    }
    let mut items = Matrix::zeros(batch.len(), catalog.cols());
    for (i, t) in batch.iter().enumerate() {
        if t.item >= catalog.rows() {
            return Err(Error::Domain(format!("item {} outside catalog of {}", t.item, catalog.rows())));
        }
        items.row_mut(i).copy_from_slice(catalog.row(t.item));
    }
    let states: Vec<&Vec<f64>> = batch.iter().map(|t| &t.state).collect();
    Ok((Matrix::from_rows(&states), items, batch.iter().map(|t| t.reward).collect()))
}

/// Supervised reward estimator: `σ(head(concat(s, a)))`, where `s` and `a`
/// are raw features or, with shared embeddings, tower outputs.
#[derive(Debug, Clone)]
pub struct RewardEstimator {
    head: Network,
    optimizer: Optimizer,
    embedder: Option<SharedEmbedder>,
    tower_optimizer: Option<TowerOptimizer>,
    updates: u64,
}

/// Loss and gradients of the estimator's BCE objective.
#[derive(Debug, Clone)]
pub struct EstimatorGrads {
    pub loss: f64,
    pub head: ParamGrads,
    pub user: Option<TowerBackward>,
    pub item: Option<TowerBackward>,
}

/// `−mean[r·ln p + (1−r)·ln(1−p)]` with `p` clamped to `[1e-7, 1 − 1e-7]`,
/// and its gradient w.r.t. `p`.
pub fn bce(probs: &[f64], rewards: &[f64]) -> (f64, Vec<f64>) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &r) in probs.iter().zip(rewards) {
        let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= r * q.ln() + (1.0 - r) * (1.0 - q).ln();
        grad.push(if q != p { 0.0 } else { (-r / q + (1.0 - r) / (1.0 - q)) / n });
    }
    (loss / n, grad)
}

impl RewardEstimator {
    pub fn new(
        state_dim: usize,
        item_dim: usize,
        mode: EmbeddingMode,
        config: &EstimatorConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        let embedder = match mode {
            EmbeddingMode::Separate => None,
            EmbeddingMode::SharedSupervised => Some(SharedEmbedder::new(state_dim, item_dim, &config.tower, rng)?),
        };
        let inputs = match &embedder {
            Some(e) => 2 * e.embedding_dim(),
            None => state_dim + item_dim,
        };
        let head = Network::mlp(inputs, &config.hidden, Activation::Relu, 1, Activation::Sigmoid, rng)?;
        Ok(Self::from_parts(head, embedder, config.optimizer))
    }

    pub fn from_parts(head: Network, embedder: Option<SharedEmbedder>, optimizer: OptimizerConfig) -> Self {
        Self {
            optimizer: Optimizer::new(optimizer, &head),
            tower_optimizer: embedder.as_ref().map(|e| TowerOptimizer::new(optimizer, e)),
            head,
            embedder,
            updates: 0,
        }
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Network {
        &mut self.head
    }

    pub fn shared(&self) -> Option<&SharedEmbedder> {
        self.embedder.as_ref()
    }

    pub fn shared_mut(&mut self) -> Option<&mut SharedEmbedder> {
        self.embedder.as_mut()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn head_input(&self, states: &Matrix, items: &Matrix) -> Result<Matrix> {
        if states.rows() != items.rows() {
            return Err(Error::config("state and item batches differ in length"));
        }
        match &self.embedder {
            None => Ok(states.hcat(items)),
            Some(e) => Ok(e.embed_users(states)?.hcat(&e.embed_items(items)?)),
        }
    }

    /// `r̂` for one (state, item) pair.
    pub fn estimate(&self, state: &[f64], item: &[f64]) -> Result<f64> {
        Ok(self.estimate_batch(&Matrix::row_vector(state), &Matrix::row_vector(item))?[0])
    }

    pub fn estimate_batch(&self, states: &Matrix, items: &Matrix) -> Result<Vec<f64>> {
        let ok = match &self.embedder {
            Some(e) => states.cols() == e.user_dim() && items.cols() == e.item_dim(),
            None => states.cols() + items.cols() == self.head.input_dim(),
        };
        if !ok {
            return Err(Error::config(format!(
                "estimator cannot take ({}, {}) features",
                states.cols(),
                items.cols()
            )));
        }
        Ok(self.head.predict(&self.head_input(states, items)?)?.into_vec())
    }

    /// BCE loss and gradients for all trainable parts; towers are entered
    /// through the supervised route.
    pub fn loss_and_grads(&self, states: &Matrix, items: &Matrix, rewards: &[f64]) -> Result<EstimatorGrads> {
        if states.rows() == 0 {
            return Err(Error::Usage("empty estimator batch".into()));
        }
        if rewards.len() != states.rows() {
            return Err(Error::config("reward count differs from batch size"));
        }
        let shared = match &self.embedder {
            Some(e) => Some(e.shared_forward(states, items, Route::Supervised)?),
            None => None,
        };
        let x = match &shared {
            Some(o) => o.state_embedding.hcat(&o.action_embedding),
            None => states.hcat(items),
        };
        if x.cols() != self.head.input_dim() {
            return Err(Error::config(format!(
                "estimator expects {} input features, got {}",
                self.head.input_dim(),
                x.cols()
            )));
        }
        let (p, cache) = self.head.forward(&x)?;
        let (loss, d_p) = bce(p.as_slice(), rewards);
        let (head, d_x) = self.head.backward(&cache, &Matrix::from_vec(p.rows(), 1, d_p))?;
        let (user, item) = match (&self.embedder, shared) {
            (Some(e), Some(o)) => {
                let (d_s, d_a) = d_x.hsplit(e.embedding_dim());
                (
                    Some(o.user_handle.backward(e.user_tower(), &d_s)?),
                    Some(o.item_handle.backward(e.item_tower(), &d_a)?),
                )
            }
            _ => (None, None),
        };
        Ok(EstimatorGrads { loss, head, user, item })
    }

    /// One optimizer step on observed rewards. Stabilized batches are refused.
    pub fn update(&mut self, batch: &dyn RewardBatch, catalog: &Matrix) -> Result<f64> {
        if batch.provenance() == Provenance::Stabilized {
            return Err(Error::Usage("reward estimator cannot train on stabilized rewards".into()));
        }
        let (states, items, rewards) = supervised_examples(batch.transitions(), catalog)?;
        self.update_examples(&states, &items, &rewards)
    }

    pub fn update_examples(&mut self, states: &Matrix, items: &Matrix, rewards: &[f64]) -> Result<f64> {
        let g = self.loss_and_grads(states, items, rewards)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFinite("estimator loss".into()));
        }
        self.optimizer.step(&mut self.head, &g.head)?;
        if let (Some(e), Some(opt), Some(u), Some(i)) =
            (self.embedder.as_mut(), self.tower_optimizer.as_mut(), &g.user, &g.item)
        {
            opt.apply(e, u, i)?;
        }
        self.updates += 1;
        Ok(g.loss)
    }
}

impl RewardModel for RewardEstimator {
    fn estimate_batch(&self, states: &Matrix, items: &Matrix) -> Result<Vec<f64>> {
        RewardEstimator::estimate_batch(self, states, items)
    }

    fn train(&mut self, batch: &dyn RewardBatch, catalog: &Matrix) -> Result<f64> {
        self.update(batch, catalog)
    }

    fn embedder(&self) -> Option<&SharedEmbedder> {
        self.shared()
    }
}

impl<T: RewardModel + ?Sized> RewardModel for &mut T {
    fn estimate_batch(&self, states: &Matrix, items: &Matrix) -> Result<Vec<f64>> {
        (**self).estimate_batch(states, items)
    }

    fn train(&mut self, batch: &dyn RewardBatch, catalog: &Matrix) -> Result<f64> {
        (**self).train(batch, catalog)
    }

    fn needs_warmup(&self) -> bool {
        (**self).needs_warmup()
    }

    fn embedder(&self) -> Option<&SharedEmbedder> {
        (**self).embedder()
    }
}

/// Free-function form of [`RewardEstimator::update`].
pub fn estimator_update(est: &mut RewardEstimator, batch: &dyn RewardBatch, catalog: &Matrix) -> Result<f64> {
    est.update(batch, catalog)
}

/// Free-function form of [`RewardEstimator::estimate`].
pub fn estimate(est: &RewardEstimator, state: &[f64], item: &[f64]) -> Result<f64> {
    est.estimate(state, item)
}

/// Copies `batch` with every reward replaced by the model's estimate.
pub fn stabilize_batch(batch: &[Transition], model: &dyn RewardModel, catalog: &Matrix) -> Result<StabilizedBatch> {
    if batch.is_empty() {
        return Ok(StabilizedBatch {
            transitions: Vec::new(),
        });
    }
    let (states, items, _) = supervised_examples(batch, catalog)?;
    let r_hat = model.estimate_batch(&states, &items)?;
    let transitions = batch
        .iter()
        .zip(r_hat)
        .map(|(t, r)| Transition { reward: r, ..t.clone() })
        .collect();
    Ok(StabilizedBatch { transitions })
}

/// Test instrument: the environment's own purchase probability, read from
/// the preference block at the front of the state features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimator {
    pub dim: usize,
    pub affinity_scale: f64,
    pub logit_bias: f64,
}

impl OracleEstimator {
    pub fn for_env(config: &crate::envsim::EnvConfig) -> Self {
        Self {
            dim: config.dim,
            affinity_scale: config.affinity_scale,
            logit_bias: config.logit_bias,
        }
    }
}

impl RewardModel for OracleEstimator {
    fn estimate_batch(&self, states: &Matrix, items: &Matrix) -> Result<Vec<f64>> {
        if states.cols() < self.dim || items.cols() != self.dim {
            return Err(Error::config("oracle estimator feature widths do not match the environment"));
        }
        Ok((0..states.rows())
            .map(|i| purchase_probability(&states.row(i)[..self.dim], items.row(i), self.affinity_scale, self.logit_bias))
            .collect())
    }

    fn train(&mut self, _batch: &dyn RewardBatch, _catalog: &Matrix) -> Result<f64> {
        Ok(0.0)
    }

    fn needs_warmup(&self) -> bool {
        false
    }
}
