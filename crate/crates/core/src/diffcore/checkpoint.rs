//! Flat binary parameter container.
//!
//! Layout: the magic bytes `MDL1`, then entries until end of file. Each entry
//! is a `u32` name length, the UTF-8 name, a `u32` rank, `rank` × `u64` dims
//! and the little-endian `f64` payload. All integers are little-endian.

use std::fs;
use std::path::Path;

use super::{DiffError, Tensor};

pub const MAGIC: &[u8; 4] = b"MDL1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor,
}

impl CheckpointEntry {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        if self.pos + n > self.buf.len() {
            return Err(DiffError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, DiffError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| DiffError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let payload = r.take(count.checked_mul(8).ok_or_else(|| DiffError::Checkpoint("size overflow".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push(CheckpointEntry {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    Ok(entries)
}

pub fn save_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<(), DiffError> {
    fs::write(path, encode_checkpoint(entries)).map_err(|e| DiffError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, DiffError> {
    let bytes = fs::read(path).map_err(|e| DiffError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
