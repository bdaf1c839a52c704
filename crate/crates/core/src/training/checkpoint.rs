//! `VPC1` checkpoints: magic, the model configuration as `key=value` text,
//! then every parameter tensor by name with little-endian f64 data.

use std::path::Path;

use super::TrainError;
use crate::mil::{MilModel, ModelConfig, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VPC1";

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), TrainError> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &MilModel) -> Result<Vec<u8>, TrainError> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    let cfg = model.config().to_kv();
    put_u32(&mut out, cfg.len())?;
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.ndim())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, TrainError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, TrainError> {
        std::str::from_utf8(self.take(n)?).map_err(|e| bad(format!("invalid UTF-8: {e}")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MilModel, TrainError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| bad("file shorter than the magic"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}")));
    }
    let cfg_len = r.u32()?;
    let config = ModelConfig::from_kv(r.utf8(cfg_len)?).map_err(|e| bad(format!("config block: {e}")))?;
    let n_records = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_records {
        let name_len = r.u32()?;
        let name = r.utf8(name_len)?.to_string();
        let ndim = r.u32()?;
        if ndim > 8 {
            return Err(bad(format!("`{name}` claims {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| bad(format!("`{name}` shape {shape:?} overflows")))?;
        let raw = r.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(MilModel::new(config, params)?)
}

pub fn save_checkpoint(path: &Path, model: &MilModel) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<MilModel, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
