//! Binary checkpoint container.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u32` tensor count;
//! per tensor `u32` name length, name bytes, `u32` rank, `u64` extents and
//! `f32` data; then a `u64` length and a JSON trailer with the model config,
//! vocabulary and label set.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::doc::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LNERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: ModelConfig,
    vocab: Vocab,
    labels: LabelSet,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn into_model<T: Real>(self) -> Result<Model<T>> {
        Model::from_params(self.config, self.vocab, self.labels, self.params.cast())
    }
}

pub fn write_checkpoint<T: Real>(model: &Model<T>, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for e in model.params.entries() {
        out.write_all(&(e.name.len() as u32).to_le_bytes())?;
        out.write_all(e.name.as_bytes())?;
        let shape = e.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &s in shape {
            out.write_all(&(s as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * e.tensor.numel());
        for v in e.tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    let trailer = Trailer {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        labels: model.labels.clone(),
    };
    let json = serde_json::to_vec(&trailer).map_err(std::io::Error::other)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::NotCheckpoint);
    }
    let mut c = Cursor { bytes, pos: 8 };
    let version = c.u32("header")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = c.u32("header")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = c.u32("tensor name")? as usize;
        let name = String::from_utf8(c.take(len, "tensor name")?.to_vec()).map_err(|_| Error::NotCheckpoint)?;
        let rank = c.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u64("tensor extents")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &s| a.checked_mul(s))
            .ok_or(Error::Truncated("tensor data"))?;
        let raw = c.take(numel.checked_mul(4).ok_or(Error::Truncated("tensor data"))?, "tensor data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(name, Tensor::new(shape, data)?, false);
    }
    let len = c.u64("trailer")? as usize;
    let json = c.take(len, "trailer")?;
    let trailer: Trailer = serde_json::from_slice(json).map_err(|e| Error::parse("<checkpoint trailer>", e))?;
    Ok(Checkpoint {
        config: trailer.config,
        vocab: trailer.vocab,
        labels: trailer.labels,
        params,
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)?.into_model()
}
