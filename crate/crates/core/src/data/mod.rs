//! Bag files, cohort manifests, train/test resampling, bag capping and the
//! synthetic cohort generator.

mod bag;
mod batch;
mod manifest;
mod split;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::survival::SurvivalError;
use crate::tensor::TensorError;

pub use bag::{decode_bag, encode_bag, read_bag, write_bag, Bag, BAG_MAGIC};
pub use batch::{bag_cap, batch_bags, subsample_or_pad, BatchedBags, PaddedBag};
pub use manifest::{load_manifest, write_cohort, Cohort, Patient, MANIFEST_HEADER};
pub use split::{resample_splits, Split};
pub use synth::{synth_generate, SynthCohort, SynthParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{trailing} trailing bytes after payload")]
    TrailingBytes { trailing: usize },
    #[error("bag header n={n}, d={d} is too large")]
    Overflow { n: u32, d: u32 },
    #[error("bag must have at least one instance and one feature, header has n={n}, d={d}")]
    EmptyBag { n: u32, d: u32 },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("patient `{id}` has feature dimension {got}, cohort has {expected}")]
    Dimension { id: String, expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
