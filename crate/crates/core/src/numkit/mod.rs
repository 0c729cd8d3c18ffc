//! Minimal dense-network kernel: forward/backward passes, optimizers,
//! deterministic random streams and a finite-difference gradient verifier.

mod gradcheck;
mod matrix;
mod network;
mod optim;
mod rng;

pub use gradcheck::{grad_check, grad_check_flat, relative_error};
pub use matrix::Matrix;
pub use network::{
    dense_backward, dense_forward, log_softmax, sigmoid, softmax, softmax_in_place, Activation,
    ForwardCache, LayerShape, Network, ParamGrads,
};
pub use optim::{optimizer_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use rng::{derive_seed, mix64, SeededRng, RNG_ALGORITHM};

pub(crate) use matrix::gemm_abt;
pub(crate) use network::dot;
