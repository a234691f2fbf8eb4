//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `TPACKPT\0`, `u32` format version, `u64`
//! length plus JSON metadata, `u32` scalar width in bits, then four value
//! blocks (`u64` count + values): level-0 planes, decoder, first moments,
//! second moments. Values load into either precision.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anneal::{AnnealSchedule, AnnealedFootprint};
use crate::field::{FieldConfig, MlpDecoder, RadianceModel, TriPlaneField};
use crate::render::RenderConfig;
use crate::train::TrainState;
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 8] = b"TPACKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Configuration echoed into every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub field: FieldConfig,
    pub render: RenderConfig,
    pub anneal: AnnealSchedule,
    pub sh_trunc: usize,
    pub seed: u64,
    pub iter: u64,
}

impl CheckpointMeta {
    pub fn policy(&self) -> AnnealedFootprint {
        AnnealedFootprint {
            schedule: self.anneal,
            sh_degrees: Some(self.sh_trunc),
        }
    }
}

fn put_block<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        if T::BITS == 32 {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

pub fn encode_checkpoint<T: Scalar>(meta: &CheckpointMeta, state: &TrainState<T>) -> Vec<u8> {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&T::BITS.to_le_bytes());
    let planes: Vec<T> = state.model.field.planes.concat();
    put_block(&mut out, &planes);
    put_block(&mut out, &state.model.decoder.params);
    put_block(&mut out, &state.m);
    put_block(&mut out, &state.v);
    out
}

pub fn save_checkpoint<T: Scalar>(path: &Path, meta: &CheckpointMeta, state: &TrainState<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(meta, state)).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn take<const N: usize>(cur: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    cur.read_exact(&mut buf).map_err(|_| bad("truncated checkpoint"))?;
    Ok(buf)
}

fn get_block<T: Scalar>(cur: &mut Cursor<&[u8]>, bits: u32, expected: usize, what: &str) -> Result<Vec<T>> {
    let n = u64::from_le_bytes(take(cur)?) as usize;
    if n != expected {
        return Err(bad(format!("{what}: {n} values, configuration implies {expected}")));
    }
    (0..n)
        .map(|_| {
            Ok(if bits == 32 {
                T::lit(f32::from_le_bytes(take(cur)?) as f64)
            } else {
                T::lit(f64::from_le_bytes(take(cur)?))
            })
        })
        .collect()
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(CheckpointMeta, TrainState<T>)> {
    let mut cur = Cursor::new(bytes);
    if &take::<8>(&mut cur)? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut cur)?);
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(take(&mut cur)?) as usize;
    let start = cur.position() as usize;
    let json = bytes.get(start..start + len).ok_or_else(|| bad("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| bad(format!("metadata: {e}")))?;
    meta.field.validate()?;
    cur.set_position((start + len) as u64);
    let bits = u32::from_le_bytes(take(&mut cur)?);
    if bits != 32 && bits != 64 {
        return Err(bad(format!("unsupported scalar width {bits}")));
    }
    let plane_len = meta.field.plane_len();
    let shape = meta.field.mlp_shape();
    let total = 3 * plane_len + shape.param_count();
    let planes: Vec<T> = get_block(&mut cur, bits, 3 * plane_len, "planes")?;
    let decoder: Vec<T> = get_block(&mut cur, bits, shape.param_count(), "decoder")?;
    let m = get_block(&mut cur, bits, total, "first moments")?;
    let v = get_block(&mut cur, bits, total, "second moments")?;
    if (cur.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after checkpoint payload"));
    }
    let field = TriPlaneField {
        config: meta.field.clone(),
        planes: [
            planes[..plane_len].to_vec(),
            planes[plane_len..2 * plane_len].to_vec(),
            planes[2 * plane_len..].to_vec(),
        ],
    };
    let model = RadianceModel {
        field,
        decoder: MlpDecoder { shape, params: decoder },
    };
    let state = TrainState {
        model,
        m,
        v,
        iter: meta.iter,
        seed: meta.seed,
        loss_history: Vec::new(),
    };
    Ok((meta, state))
}

/// Scalar width (32 or 64) the payload was written with.
pub fn stored_scalar_bits(bytes: &[u8]) -> Result<u32> {
    let mut cur = Cursor::new(bytes);
    if &take::<8>(&mut cur)? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let _version = u32::from_le_bytes(take(&mut cur)?);
    let len = u64::from_le_bytes(take(&mut cur)?);
    cur.set_position(cur.position() + len);
    Ok(u32::from_le_bytes(take(&mut cur)?))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointMeta, TrainState<T>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
