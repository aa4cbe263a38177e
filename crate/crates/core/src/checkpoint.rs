//! `FEDCKPT1` parameter checkpoints.
//!
//! Layout (little-endian): magic `FEDCKPT1`, `u32` entry count, then per
//! entry a `u16` name length, UTF-8 name, `u8` rank, `rank` x `u32` extents
//! and the `f32` values. Momentum buffers are stored as separate entries
//! whose name carries the `.m` suffix.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CheckpointError;
use crate::param::ParamStore;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"FEDCKPT1";

pub fn encode<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>, CheckpointError> {
    let entries = store.entries();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::NameTooLong(name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into `(name, tensor)` entries in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    let mut names = std::collections::HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(CheckpointError::Duplicate(name));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Truncated)?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Truncated);
    }
    Ok(entries)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(store)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Loads a checkpoint into an already-constructed store; names must match exactly.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = fs::read(path)?;
    load_bytes_into(store, &bytes)
}

pub fn load_bytes_into<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<(), CheckpointError> {
    let entries: Vec<_> = decode(bytes)?
        .into_iter()
        .map(|(n, t)| (n, t.cast::<T>()))
        .collect();
    store.load_entries(&entries)
}
