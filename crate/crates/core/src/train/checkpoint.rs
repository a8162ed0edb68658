//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NNCK" | version u16 | text_len u32 | text (UTF-8)
//! count u32 | count x { name_len u16 | name | dtype u8 | rank u8 | dims u64 x rank | data }
//! ```
//!
//! The text block holds the architecture descriptor, the RNG algorithm, the
//! optimizer step, and the training config (`train.` prefixed keys).
//! Tensors are parameters, batchnorm buffers, and Adam moments
//! (`adam.m.<param>`, `adam.v.<param>`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Tensor, RNG_ALGORITHM};
use crate::train::config::{parse_key_values, TrainConfig};
use crate::train::optim::AdamState;
use crate::zoo::ArchDescriptor;

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the model (which must carry an architecture descriptor),
/// optimizer state, and config.
pub fn checkpoint_bytes(model: &Model, adam: &AdamState, cfg: &TrainConfig) -> Result<Vec<u8>> {
    let desc = model
        .descriptor()
        .ok_or_else(|| Error::CheckpointFormat("model has no architecture descriptor".into()))?;
    let params = model.params();
    if adam.m.len() != params.len() || adam.v.len() != params.len() {
        return Err(Error::mismatch("optimizer state does not match the model's parameters"));
    }
    let mut text = desc.to_text();
    text.push_str(&format!("rng={RNG_ALGORITHM}\nadam_step={}\n", adam.t));
    for line in cfg.to_text().lines() {
        text.push_str("train.");
        text.push_str(line);
        text.push('\n');
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());

    let buffers = model.buffers();
    let count = params.len() * 3 + buffers.len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for p in &params {
        push_tensor(&mut out, &p.name, &p.value);
    }
    for (name, t) in &buffers {
        push_tensor(&mut out, name, t);
    }
    for p in &params {
        push_tensor(&mut out, &format!("adam.m.{}", p.name), &adam.m[p.id()]);
    }
    for p in &params {
        push_tensor(&mut out, &format!("adam.v.{}", p.name), &adam.v[p.id()]);
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, adam: &AdamState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, adam, cfg)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CheckpointFormat("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name_len = self.u16()? as usize;
        let name = self.string(name_len)?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::CheckpointFormat(format!("tensor `{name}` has unknown dtype code {dtype}")));
        }
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Truncated)?;
        let raw = self.take(len.checked_mul(8).ok_or(Error::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, dims, data))
    }
}

fn place(store: &mut HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str, target: &mut Tensor) -> Result<()> {
    let (dims, data) = store
        .remove(name)
        .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor `{name}`")))?;
    if dims != target.shape() {
        return Err(Error::CheckpointShape { name: name.to_string(), expected: target.shape().to_vec(), found: dims });
    }
    *target = Tensor::new(&dims, data)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { Error::Truncated } else { Error::BadMagic });
    }
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let text_len = r.u32()? as usize;
    let text = r.string(text_len)?;

    let mut desc_text = String::new();
    let mut config = TrainConfig::default();
    let mut adam_step = 0u64;
    for (k, v) in parse_key_values(&text)? {
        if let Some(key) = k.strip_prefix("train.") {
            config.set(key, &v)?;
        } else if k == "rng" {
            if v != RNG_ALGORITHM {
                return Err(Error::CheckpointFormat(format!("unsupported rng `{v}`")));
            }
        } else if k == "adam_step" {
            adam_step = v.parse().map_err(|_| Error::CheckpointFormat(format!("bad adam_step `{v}`")))?;
        } else {
            desc_text.push_str(&format!("{k}={v}\n"));
        }
    }
    let descriptor = ArchDescriptor::from_text(&desc_text)?;

    let count = r.u32()? as usize;
    let mut store = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, dims, data) = r.tensor()?;
        if store.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut model = descriptor.build(config.seed)?;
    let mut adam = AdamState::new(&model);
    adam.t = adam_step;
    for p in model.params_mut() {
        place(&mut store, &p.name, &mut p.value)?;
        place(&mut store, &format!("adam.m.{}", p.name), &mut adam.m[p.id()])?;
        place(&mut store, &format!("adam.v.{}", p.name), &mut adam.v[p.id()])?;
    }
    for (name, t) in model.buffers_mut() {
        place(&mut store, &name, t)?;
    }
    if let Some(extra) = store.keys().min() {
        return Err(Error::CheckpointFormat(format!("unexpected tensor `{extra}`")));
    }
    Ok(Checkpoint { model, adam, config })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    checkpoint_from_bytes(&bytes)
}
