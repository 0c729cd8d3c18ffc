//! Laboratory for model-free reinforcement learning under stochastic
//! recommendation rewards, with reward stabilization by a supervised
//! estimator (optionally sharing its embeddings with the RL model).

pub mod error;
pub mod numkit;

pub use error::{Error, Result};
pub mod envsim;
pub mod agents;
pub mod stabilize;
pub mod harness;
pub mod report;
