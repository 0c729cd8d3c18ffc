//! User/item towers shared between the reward estimator and the RL model.
//!
//! Both consumers see the same embedding values, but only the supervised
//! route hands out parameter gradients. A handle obtained through the RL
//! route still propagates gradients to its inputs (needed when an actor is
//! trained through the item tower) and never produces tower updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, ForwardCache, Matrix, Network, Optimizer, OptimizerConfig, ParamGrads, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Supervised,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TowerConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            hidden: vec![32],
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::validation("embedding_dim", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("tower_hidden", "layer sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedEmbedder {
    user_tower: Network,
    item_tower: Network,
}

/// Backward access to one tower evaluation.
#[derive(Debug, Clone)]
pub struct TowerHandle {
    route: Route,
    cache: ForwardCache,
}

/// Result of a backward pass through a [`TowerHandle`].
#[derive(Debug, Clone)]
pub struct TowerBackward {
    /// Parameter gradients; always `None` for the RL route.
    pub grads: Option<ParamGrads>,
    pub d_input: Matrix,
}

impl TowerHandle {
    pub fn route(&self) -> Route {
        self.route
    }

    pub fn backward(&self, tower: &Network, d_embedding: &Matrix) -> Result<TowerBackward> {
        match self.route {
            Route::Supervised => {
                let (g, d_input) = tower.backward(&self.cache, d_embedding)?;
                Ok(TowerBackward {
                    grads: Some(g),
                    d_input,
                })
            }
            Route::Rl => Ok(TowerBackward {
                grads: None,
                d_input: tower.input_gradient(&self.cache, d_embedding)?,
            }),
        }
    }
}

/// Embeddings of a batch of (user, item) pairs and the handles to backpropagate through them.
#[derive(Debug, Clone)]
pub struct SharedOutput {
    pub state_embedding: Matrix,
    pub action_embedding: Matrix,
    pub user_handle: TowerHandle,
    pub item_handle: TowerHandle,
}

impl SharedEmbedder {
    pub fn new(user_dim: usize, item_dim: usize, config: &TowerConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        // tanh keeps embeddings bounded for every downstream head
        let user_tower = Network::mlp(
            user_dim,
            &config.hidden,
            Activation::Relu,
            config.embedding_dim,
            Activation::Tanh,
            rng,
        )?;
        let item_tower = Network::mlp(
            item_dim,
            &config.hidden,
            Activation::Relu,
            config.embedding_dim,
            Activation::Tanh,
            rng,
        )?;
        Ok(Self { user_tower, item_tower })
    }

    pub fn from_towers(user_tower: Network, item_tower: Network) -> Result<Self> {
        if user_tower.output_dim() != item_tower.output_dim() {
            return Err(Error::config("towers must produce embeddings of one width"));
        }
        Ok(Self { user_tower, item_tower })
    }

    pub fn embedding_dim(&self) -> usize {
        self.user_tower.output_dim()
    }

    pub fn user_dim(&self) -> usize {
        self.user_tower.input_dim()
    }

    pub fn item_dim(&self) -> usize {
        self.item_tower.input_dim()
    }

    pub fn user_tower(&self) -> &Network {
        &self.user_tower
    }

    pub fn item_tower(&self) -> &Network {
        &self.item_tower
    }

    pub fn embed_users(&self, users: &Matrix) -> Result<Matrix> {
        self.user_tower.predict(users)
    }

    pub fn embed_user(&self, user: &[f64]) -> Result<Vec<f64>> {
        self.user_tower.predict_one(user)
    }

    pub fn embed_items(&self, items: &Matrix) -> Result<Matrix> {
        self.item_tower.predict(items)
    }

    pub fn forward_users(&self, users: &Matrix, route: Route) -> Result<(Matrix, TowerHandle)> {
        let (emb, cache) = self.user_tower.forward(users)?;
        Ok((emb, TowerHandle { route, cache }))
    }

    pub fn forward_items(&self, items: &Matrix, route: Route) -> Result<(Matrix, TowerHandle)> {
        let (emb, cache) = self.item_tower.forward(items)?;
        Ok((emb, TowerHandle { route, cache }))
    }

    /// Embeds user and item features through the chosen gradient route.
    pub fn shared_forward(&self, users: &Matrix, items: &Matrix, route: Route) -> Result<SharedOutput> {
        if users.rows() != items.rows() {
            return Err(Error::config("user and item batches differ in length"));
        }
        let (state_embedding, user_handle) = self.forward_users(users, route)?;
        let (action_embedding, item_handle) = self.forward_items(items, route)?;
        Ok(SharedOutput {
            state_embedding,
            action_embedding,
            user_handle,
            item_handle,
        })
    }
}

/// Optimizer pair for the two towers; refuses gradients that did not come
/// from the supervised route.
#[derive(Debug, Clone)]
pub struct TowerOptimizer {
    user: Optimizer,
    item: Optimizer,
}

impl TowerOptimizer {
    pub fn new(config: OptimizerConfig, embedder: &SharedEmbedder) -> Self {
        Self {
            user: Optimizer::new(config, &embedder.user_tower),
            item: Optimizer::new(config, &embedder.item_tower),
        }
    }

    /// Applies whatever parameter gradients the backward passes produced.
    /// Severed (RL-route) results carry none and leave the towers untouched.
    pub fn apply(
        &mut self,
        embedder: &mut SharedEmbedder,
        user: &TowerBackward,
        item: &TowerBackward,
    ) -> Result<()> {
        if let Some(g) = &user.grads {
            self.user.step(&mut embedder.user_tower, g)?;
        }
        if let Some(g) = &item.grads {
            self.item.step(&mut embedder.item_tower, g)?;
        }
        Ok(())
    }
}
