//! Binary checkpoint: parameters, optimizer state and a free-form metadata
//! text, protected by a SHA-256 trailer.
//!
//! Layout (little-endian): `MPKT`, version `u32`, parameter count `u32`, then
//! per parameter a length-prefixed UTF-8 name, rank `u32`, extents `u64` and
//! the `f64` payload; Adam step `u64` and its five hyper-parameters as `f64`,
//! followed by both moment buffers in parameter order; a length-prefixed
//! metadata string; finally 32 bytes of SHA-256 over everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::adam::AdamState;
use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MPKT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: AdamState,
    pub meta: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        let a = &self.adam;
        out.extend_from_slice(&a.step.to_le_bytes());
        put_f64s(&mut out, &[a.lr, a.weight_decay, a.beta1, a.beta2, a.eps]);
        for buf in a.m.iter().chain(&a.v) {
            put_f64s(&mut out, buf);
        }
        put_str(&mut out, &self.meta);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Data("checkpoint is truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Data("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let data = r.f64s(len)?;
            sizes.push(len);
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let step = r.u64()?;
        let hyper = r.f64s(5)?;
        let mut m = Vec::with_capacity(count);
        for &len in &sizes {
            m.push(r.f64s(len)?);
        }
        let mut v = Vec::with_capacity(count);
        for &len in &sizes {
            v.push(r.f64s(len)?);
        }
        let meta = r.string()?;
        if r.pos != body.len() {
            return Err(Error::Data("trailing bytes in checkpoint".into()));
        }
        let adam = AdamState {
            lr: hyper[0],
            weight_decay: hyper[1],
            beta1: hyper[2],
            beta2: hyper[3],
            eps: hyper[4],
            step,
            m,
            v,
        };
        Ok(Checkpoint { params, adam, meta })
    }

    /// Writes atomically: a sibling temp file is renamed over `path`, so an
    /// interrupted save leaves the previous checkpoint intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Data("bad length".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Data("invalid UTF-8 in checkpoint".into()))
    }
}
