//! FPCK checkpoint container: named f32 tensors plus a config snapshot,
//! little-endian throughout, bit-exact across save/load.
//!
//! Layout: magic `FPCK` | u32 version | u32 tensor count | per tensor
//! (u16 name length, name bytes, u8 rank, u32 dims..., f32 payload) |
//! u32 snapshot length | snapshot text.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

pub const FPCK_MAGIC: &[u8; 4] = b"FPCK";
pub const FPCK_VERSION: u32 = 1;

/// Serializes every parameter tensor and the config snapshot.
pub fn save(params: &Params<f32>, snapshot: &str, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FPCK_MAGIC);
    buf.extend_from_slice(&FPCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut seen = std::collections::HashSet::new();
    for e in params.iter() {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::format(format!("duplicate tensor name on save: {}", e.name)));
        }
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::format(format!("tensor name too long: {}", e.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = e.tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::format("tensor rank exceeds u8".to_string()));
        }
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let snap = snapshot.as_bytes();
    buf.extend_from_slice(&(snap.len() as u32).to_le_bytes());
    buf.extend_from_slice(snap);
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a checkpoint back into a fresh parameter store (entries in file
/// order) plus the config snapshot.
pub fn load(path: &Path) -> Result<(Params<f32>, String)> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic = cur.take(4)?;
    if magic != FPCK_MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}, expected FPCK")));
    }
    let version = cur.u32()?;
    if version != FPCK_VERSION {
        return Err(Error::format(format!("unsupported FPCK version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format("tensor name is not utf-8"))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| Error::format(format!("tensor {name}: {e}")))?;
        params.add(name, tensor)?;
    }
    let snap_len = cur.u32()? as usize;
    let snapshot = std::str::from_utf8(cur.take(snap_len)?)
        .map_err(|_| Error::format("config snapshot is not utf-8"))?
        .to_string();
    if cur.pos != buf.len() {
        return Err(Error::format(format!("{} trailing bytes after snapshot", buf.len() - cur.pos)));
    }
    Ok((params, snapshot))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(format!(
                "truncated file: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
