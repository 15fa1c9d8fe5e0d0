//! Versioned binary checkpoints of named f32 parameter arrays.
//!
//! Layout (little-endian): magic `ITSACKPT`, format version `u32`, entry
//! count `u32`, then per entry: name length `u32`, UTF-8 name, rank `u32`,
//! extents as `u64`, and the `f32` payload.

use std::path::Path;

use diffnet::NdArray;

use crate::error::{HarnessError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ITSACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(entries: &[(String, &NdArray<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, a) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(HarnessError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<(String, NdArray<f32>)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(HarnessError::Checkpoint("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(HarnessError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = c.u32("entry count")?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| HarnessError::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.u64("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| HarnessError::Checkpoint(format!("extent overflow in {name}")))?;
        let bytes = c.take(count.checked_mul(4).unwrap_or(usize::MAX), "payload")?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, NdArray::new(shape, data).map_err(|e| HarnessError::Checkpoint(e.to_string()))?));
    }
    if c.pos != buf.len() {
        return Err(HarnessError::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, &NdArray<f32>)]) -> Result<()> {
    std::fs::write(path, encode_checkpoint(entries)).map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, NdArray<f32>)>> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| HarnessError::io(path, e))?)
}
