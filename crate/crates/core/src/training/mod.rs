//! Parameter initialisation, Adam, the minibatch training loop, evaluation
//! across resampled splits and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod gradsuite;
mod init;
mod train;

use thiserror::Error;

use crate::data::DataError;
use crate::mil::ModelError;
use crate::survival::SurvivalError;
use crate::tensor::TensorError;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{LossKind, TrainConfig};
pub use gradsuite::{
    check_model_gradient, model_gradient_suite, GradCase, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use init::init_params;
pub use train::{
    cross_validate, evaluate, mean_std, predict_risks, train, CvReport, EpochRecord, FoldResult, TrainHistory,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter `{name}` at optimiser step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("epoch {epoch}: all {batches} batches were skipped (no comparable pairs or events)")]
    AllBatchesSkipped { epoch: usize, batches: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
