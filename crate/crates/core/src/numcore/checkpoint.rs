//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `RTCK`, version `u32`, tensor count `u32`,
//! then per tensor: name length `u32`, UTF-8 name, rank `u32`, `rank` extents
//! as `u64`, and the values as `f32`.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::bytes::ByteReader;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTCK";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = ByteReader::new(buf);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let len = r.u32("name length")? as usize;
        let name = r.utf8(len, "tensor name")?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let at = r.offset();
        let numel: usize = shape.iter().product();
        let data = r
            .f32s(numel, &format!("payload of tensor {idx} ({name})"))?
            .into_iter()
            .map(f64::from)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))?;
        out.push((name, t));
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint into a fresh store.
pub fn load(path: &Path) -> Result<ParamStore> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut store = ParamStore::new();
    for (name, t) in decode(&buf)? {
        store.register(name, t)?;
    }
    Ok(store)
}

/// Overwrites every parameter of `store` from the checkpoint; names and
/// shapes must match exactly.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let loaded = load(path)?;
    if loaded.len() != store.len() || store.names().any(|n| !loaded.contains(n)) {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the model's parameter set",
            path.display()
        )));
    }
    for (name, t) in loaded.iter() {
        store.set(name, t.clone())?;
    }
    Ok(())
}
