//! Multiple-instance survival models with attention mean pooling and
//! attention variance pooling.
//!
//! A patient is a bag of instance feature vectors with a right-censored
//! survival label. Bags are encoded instance-wise, pooled into a fixed-size
//! vector by attention-weighted means and (optionally) attention-weighted
//! variances along learned projections, and mapped to a scalar risk. Models
//! are trained with a sigmoid surrogate of the concordance index or with the
//! Cox partial likelihood, using a small reverse-mode autodiff tape in f64.

pub mod autodiff;
pub mod data;
pub mod gradcheck;
pub mod interpret;
pub mod mil;
pub mod reference;
pub mod survival;
pub mod tensor;
pub mod training;

pub use autodiff::{Tape, Var};
pub use data::{Bag, Cohort, DataError, Patient, Split};
pub use interpret::{InterpretError, PatientReport, SAsqRReport};
pub use mil::{EtaKind, MilModel, ModelConfig, ModelError, ModelFamily, ParamStore, PoolOutputs};
pub use survival::{concordance_index, SurvivalError, SurvivalLabel};
pub use tensor::{Tensor, TensorError};
pub use training::{LossKind, TrainConfig, TrainError};
