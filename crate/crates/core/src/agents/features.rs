use crate::error::Result;
use crate::numkit::Matrix;
use crate::stabilize::{Route, SharedEmbedder, TowerHandle};

/// Input representation the RL networks consume.
///
/// `Raw` feeds observation and item features directly. `Shared` maps them
/// through the supervised towers on the RL route, so RL losses can never
/// move the embedding parameters.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    Raw {
        items: &'a Matrix,
    },
    Shared {
        embedder: &'a SharedEmbedder,
        /// Item-tower output for every catalog item, `M × k`.
        item_embeddings: &'a Matrix,
    },
}

impl<'a> Features<'a> {
    pub fn raw(items: &'a Matrix) -> Self {
        Features::Raw { items }
    }

    pub fn shared(embedder: &'a SharedEmbedder, item_embeddings: &'a Matrix) -> Self {
        Features::Shared {
            embedder,
            item_embeddings,
        }
    }

    /// Per-item inputs for pair-scoring heads.
    pub fn items(&self) -> &'a Matrix {
        match self {
            Features::Raw { items } => items,
            Features::Shared { item_embeddings, .. } => item_embeddings,
        }
    }

    pub fn num_items(&self) -> usize {
        self.items().rows()
    }

    pub fn item_dim(&self) -> usize {
        self.items().cols()
    }

    /// Width of encoded states, given the raw observation width.
    pub fn state_dim(&self, raw_dim: usize) -> usize {
        match self {
            Features::Raw { .. } => raw_dim,
            Features::Shared { embedder, .. } => embedder.embedding_dim(),
        }
    }

    /// Width of an encoded continuous action of raw width `raw_dim`.
    pub fn action_dim(&self, raw_dim: usize) -> usize {
        match self {
            Features::Raw { .. } => raw_dim,
            Features::Shared { embedder, .. } => embedder.embedding_dim(),
        }
    }

    pub fn encode_states(&self, states: &Matrix) -> Result<Matrix> {
        match self {
            Features::Raw { .. } => Ok(states.clone()),
            Features::Shared { embedder, .. } => embedder.embed_users(states),
        }
    }

    pub fn encode_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            Features::Raw { .. } => Ok(state.to_vec()),
            Features::Shared { embedder, .. } => embedder.embed_user(state),
        }
    }

    /// Encodes continuous action vectors (which live in item-feature space).
    /// The handle, when present, backpropagates to the action vectors only.
    pub fn encode_actions(&self, actions: &Matrix) -> Result<(Matrix, Option<TowerHandle>)> {
        match self {
            Features::Raw { .. } => Ok((actions.clone(), None)),
            Features::Shared { embedder, .. } => {
                let (emb, handle) = embedder.forward_items(actions, Route::Rl)?;
                Ok((emb, Some(handle)))
            }
        }
    }

    /// Gradient w.r.t. raw action vectors from the gradient w.r.t. their encoding.
    pub fn action_gradient(&self, handle: Option<&TowerHandle>, d_encoded: &Matrix) -> Result<Matrix> {
        match (self, handle) {
            (Features::Shared { embedder, .. }, Some(h)) => {
                Ok(h.backward(embedder.item_tower(), d_encoded)?.d_input)
            }
            _ => Ok(d_encoded.clone()),
        }
    }
}
