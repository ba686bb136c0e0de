//! Binary parameter bundle: little-endian, exact f64 bits.
//!
//! Layout: magic `HNPB`, format version (u32), entry count (u64), then per
//! entry: name length (u64), UTF-8 name, rank (u32), dims (u64 each), values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"HNPB";
pub const BUNDLE_VERSION: u32 = 1;

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
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
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {} (wanted {n} more)", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        // Any length field larger than what is left cannot be honest.
        if v > remaining.saturating_mul(8).max(1 << 20) {
            return Err(format!("implausible length {v} at byte {}", self.pos - 8));
        }
        Ok(v as usize)
    }
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a parameter bundle (bad magic)".into());
    }
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(format!("unsupported bundle version {version}, expected {BUNDLE_VERSION}"));
    }
    let count = r.len()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.len()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| format!("parameter name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 2 {
            return Err(format!("parameter `{name}` has rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or("size overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        store.add(name, value).map_err(|e| e.to_string())?;
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, encode_params(store))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    decode_params(&bytes).map_err(|detail| Error::Load {
        path: path.to_path_buf(),
        detail,
    })
}
