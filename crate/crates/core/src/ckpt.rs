//! Versioned binary checkpoints with bit-exact round-trips.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DPBN"
//! version u32      currently 1
//! arch    u32 byte length + JSON descriptor
//! count   u32      number of tensors
//! tensor  u32 name length + UTF-8 name
//!         u32 rank + rank × u32 dims
//!         f64 × product(dims), little-endian
//! ```
//!
//! Values are stored as 64-bit floats regardless of the crate's compute
//! precision, so checkpoints stay interchangeable across builds. A model
//! checkpoint holds the model tensors; training checkpoints append
//! optimizer state under `optim.*` names, which model loading ignores.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ArchDescriptor, ModelParams};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DPBN";
pub const VERSION: u32 = 1;

/// A parsed checkpoint: the architecture descriptor plus every stored
/// tensor in file order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: ArchDescriptor,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn corrupt(offset: u64, message: impl Into<String>) -> Error {
    Error::Checkpoint { offset, message: message.into() }
}

/// Serializes a checkpoint to `path`.
pub fn save(path: &Path, arch: &ArchDescriptor, tensors: &[(String, &Tensor)]) -> Result<()> {
    let arch_json = serde_json::to_vec(arch)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&arch_json);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt(
                self.pos as u64,
                format!(
                    "unexpected end of file reading {what}: needed {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads and validates a checkpoint.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(corrupt(0, "not a DPBN checkpoint"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version} (expected {VERSION})")));
    }

    let arch_off = cur.pos as u64;
    let arch_len = cur.u32("descriptor length")? as usize;
    let arch_bytes = cur.take(arch_len, "architecture descriptor")?;
    let arch: ArchDescriptor = serde_json::from_slice(arch_bytes)
        .map_err(|e| corrupt(arch_off, format!("bad architecture descriptor: {e}")))?;

    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = cur.u32("tensor name length")? as usize;
        if name_len > 4096 {
            return Err(corrupt(
                (cur.pos - 4) as u64,
                format!("unreasonable tensor name length {name_len}"),
            ));
        }
        let name_off = cur.pos as u64;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| corrupt(name_off, "tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(corrupt((cur.pos - 4) as u64, format!("unreasonable rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("tensor dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let data_off = cur.pos as u64;
        let raw = cur.take(n * 8, "tensor data")?;
        let data: Vec<Real> = raw
            .chunks_exact(8)
            .map(|c| {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]) as Real
            })
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| {
            corrupt(data_off, format!("tensor {i} ({name}) invalid: {e}"))
        })?;
        tensors.push((name, t));
    }
    if cur.pos != buf.len() {
        return Err(corrupt(
            cur.pos as u64,
            format!("{} trailing bytes after last tensor", buf.len() - cur.pos),
        ));
    }
    Ok(Checkpoint { arch, tensors })
}

/// Saves a model's parameters.
pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    save(path, &model.arch, &model.named_tensors())
}

/// Loads a model, ignoring any optimizer-state tensors in the file.
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let ckpt = load(path)?;
    ModelParams::from_named(&ckpt.arch, &ckpt.tensors)
}
