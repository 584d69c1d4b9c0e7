//! Model checkpoints (`.avck`).
//!
//! Layout: magic `AVFCKPT1`, header length as u64 LE, a JSON header, the
//! FNV-1a hash of the header bytes as u64 LE, then every parameter as f32 LE
//! in the order the header lists them.

use std::path::Path;

use avfuse_core::fusion::{EncoderInit, ModelDims, ModelParams};
use serde::{Deserialize, Serialize};

use super::fnv1a;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AVFCKPT1";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "avck";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dims: ModelDims,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
}

fn shapes(params: &ModelParams) -> Vec<TensorShape> {
    params
        .tensor_infos()
        .into_iter()
        .map(|i| TensorShape { name: i.name, shape: [i.rows, i.cols] })
        .collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: VERSION,
        dims: ck.params.dims(),
        seed: ck.seed,
        epoch: ck.epoch,
        tensors: shapes(&ck.params),
    };
    let json = serde_json::to_vec(&header)?;
    let flat = ck.params.flatten();
    if flat.iter().any(|v| v.is_nan() || v.abs() > f64::from(f32::MAX)) {
        return Err(Error::format("parameter outside the f32 range"));
    }
    let mut out = Vec::with_capacity(32 + json.len() + 4 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&fnv1a(&json).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("bad magic"));
    }
    let take = |at: usize, n: usize| at.checked_add(n).and_then(|end| bytes.get(at..end)).ok_or_else(|| Error::format("truncated"));
    let len = u64::from_le_bytes(take(8, 8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::format("header length overflow"))?;
    let json = take(16, len)?;
    let hash_at = 16 + len;
    let hash = u64::from_le_bytes(take(hash_at, 8)?.try_into().expect("8 bytes"));
    if hash != fnv1a(json) {
        return Err(Error::format("header checksum mismatch"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| Error::format(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::format(format!("unsupported version {}", header.version)));
    }
    let mut params = ModelParams::init(header.dims, EncoderInit::Uniform, 0)
        .map_err(|e| Error::format(format!("dims: {e}")))?;
    if shapes(&params) != header.tensors {
        return Err(Error::format("shape mismatch between header dims and tensor list"));
    }
    let payload = &bytes[hash_at + 8..];
    let n = params.num_params();
    if payload.len() != 4 * n {
        return Err(Error::format(if payload.len() < 4 * n { "truncated" } else { "trailing bytes after payload" }));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    params.set_flat(&flat).map_err(|e| Error::format(e.to_string()))?;
    Ok(Checkpoint { params, seed: header.seed, epoch: header.epoch })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    super::write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_bytes(path)?)
}

/// Loads a checkpoint and insists on the given dimensions.
pub fn load_checkpoint_for(path: &Path, expected: &ModelDims) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    check_dims(&ck.params.dims(), expected)?;
    Ok(ck)
}

pub fn check_dims(found: &ModelDims, expected: &ModelDims) -> Result<()> {
    if found != expected {
        return Err(Error::format(format!("dims: checkpoint has {found:?}, expected {expected:?}")));
    }
    Ok(())
}

/// Parameters rounded through `f32`, as a save/load round trip would leave them.
pub fn quantize_params(params: &ModelParams) -> ModelParams {
    let mut q = params.clone();
    q.for_each_tensor_mut(|_, v| v.iter_mut().for_each(|x| *x = f64::from(*x as f32)));
    q
}
