//! Bag-level forward models: instance encoder, attention, mean and variance
//! pooling, the variance nonlinearity and the prediction head.

mod config;
pub mod gcn;
mod model;
mod params;
pub mod pool;

use thiserror::Error;

use crate::tensor::TensorError;

pub use config::{parse_kv, EtaKind, ModelConfig, ModelFamily};
pub use model::{param_layout, BagTrace, Inspection, MilModel, ModelVars, ParamRole, ParamSpec, PoolOutputs};
pub use params::ParamStore;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("instance dimension mismatch: model expects {expected}, bag has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter `{name}` {problem}")]
    Param { name: String, problem: String },
    #[error("mask length {mask} does not match bag size {rows}")]
    Mask { mask: usize, rows: usize },
    #[error("bag has no unmasked instances")]
    EmptyBag,
}
