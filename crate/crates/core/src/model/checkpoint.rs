//! Binary tensor checkpoints.
//!
//! Layout (little-endian): magic `SGEO`, u32 version (1), u32 tensor count,
//! then per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
//! f64 payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGEO";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::InvalidTensor(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        let rank = u8::try_from(t.rank()).map_err(|_| Error::InvalidTensor(format!("rank too large: {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::InvalidTensor(format!("extent too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format { context: format!("truncated checkpoint while reading {what}"), offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format { context: "bad checkpoint magic".into(), offset: 0 });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { context: format!("unsupported checkpoint version {version}"), offset: 4 });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let start = c.pos;
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format { context: "name is not UTF-8".into(), offset: start + 2 })?
            .to_string();
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n * 8, "payload")?;
        let data = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::Format { context: "trailing bytes after last tensor".into(), offset: c.pos });
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
