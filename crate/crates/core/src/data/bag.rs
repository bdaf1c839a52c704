use std::fs;
use std::path::Path;

use super::DataError;
use crate::tensor::Tensor;

/// Leading bytes of a bag file.
pub const BAG_MAGIC: [u8; 4] = *b"VPB1";

/// One patient's instances: an n×d feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub patient_id: String,
    pub features: Tensor,
}

impl Bag {
    pub fn new(patient_id: impl Into<String>, features: Tensor) -> Result<Self, DataError> {
        if features.ndim() != 2 {
            return Err(DataError::Invalid(format!(
                "bag features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Serialises features as `VPB1 | n: u32 LE | d: u32 LE | n·d f32 LE`, row-major.
/// Values are narrowed to 32-bit floats.
pub fn encode_bag(bag: &Bag) -> Vec<u8> {
    let (n, d) = (bag.len(), bag.dim());
    let mut out = Vec::with_capacity(12 + 4 * n * d);
    out.extend_from_slice(&BAG_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in bag.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_bag(bytes: &[u8], patient_id: impl Into<String>) -> Result<Bag, DataError> {
    if bytes.len() < 12 {
        return Err(DataError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != BAG_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: BAG_MAGIC,
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if n == 0 || d == 0 {
        return Err(DataError::EmptyBag { n, d });
    }
    let payload = (n as usize)
        .checked_mul(d as usize)
        .and_then(|c| c.checked_mul(4))
        .and_then(|b| b.checked_add(12))
        .ok_or(DataError::Overflow { n, d })?;
    if bytes.len() < payload {
        return Err(DataError::Truncated {
            expected: payload,
            found: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(DataError::TrailingBytes {
            trailing: bytes.len() - payload,
        });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Bag::new(patient_id, Tensor::matrix(n as usize, d as usize, data)?)
}

pub fn write_bag(path: &Path, bag: &Bag) -> Result<(), DataError> {
    fs::write(path, encode_bag(bag)).map_err(|e| DataError::io(path, e))
}

/// Reads a bag file; the patient id defaults to the file stem.
pub fn read_bag(path: &Path) -> Result<Bag, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bag(&bytes, id)
}
