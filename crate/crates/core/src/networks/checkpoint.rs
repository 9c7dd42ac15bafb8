//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MMCK"
//! version  u32      1
//! meta     u32 length + UTF-8 text (free-form, usually a record)
//! count    u32
//! count times:
//!   path   u32 length + UTF-8
//!   decay  u8 (0 or 1)
//!   rank   u32
//!   dims   rank x u64
//!   data   prod(dims) x f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::params::Parameters;

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub params: Parameters,
}

pub fn encode(meta: &str, params: &Parameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, meta);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        put_str(&mut out, &p.path);
        out.push(p.decay as u8);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::parse(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::parse("checkpoint string is not UTF-8"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::parse("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse(format!("unsupported checkpoint version {version}")));
    }
    let meta = r.string()?;
    let count = r.u32()?;
    let mut params = Parameters::new();
    for _ in 0..count {
        let path = r.string()?;
        let decay = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::parse(format!("bad decay flag {b} for {path}"))),
        };
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::parse(format!("rank {rank} too large for {path}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::parse("dimension overflow"))?;
            n = n.checked_mul(d).ok_or_else(|| Error::parse("dimension overflow"))?;
            shape.push(d);
        }
        if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
            return Err(Error::parse(format!("checkpoint truncated in {path}")));
        }
        let data: Vec<f64> = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.index_of(&path).is_some() {
            return Err(Error::parse(format!("duplicate parameter {path}")));
        }
        params.push(path, Tensor::new(shape, data)?, decay);
    }
    if r.remaining() != 0 {
        return Err(Error::parse(format!(
            "{} trailing bytes after checkpoint",
            r.remaining()
        )));
    }
    Ok(Checkpoint { meta, params })
}
