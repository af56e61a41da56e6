//! GVCK parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"GVCK" | version: u32 | count: u32 |
//!   count x ( name_len: u16 | name: UTF-8 | rank: u8 | rank x dim: u32 | f32 data )
//! ```
//!
//! Parameters are written in lexicographic name order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const GVCK_MAGIC: &[u8; 4] = b"GVCK";
pub const GVCK_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let names = store.sorted_names();
    let mut out = Vec::new();
    out.extend_from_slice(GVCK_MAGIC);
    out.extend_from_slice(&GVCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let p = store.by_name(name).expect("listed name exists");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = p.tensor.shape();
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::GvckFormat(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes every `(name, tensor)` pair in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != GVCK_MAGIC {
        return Err(Error::GvckFormat("bad magic, expected GVCK".into()));
    }
    let version = r.u32("version")?;
    if version != GVCK_VERSION {
        return Err(Error::GvckFormat(format!("unsupported version {version}")));
    }
    let count = r.u32("parameter count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::GvckFormat("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let size = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|s| s.checked_mul(4))
            .ok_or_else(|| Error::GvckFormat(format!("`{name}` dimensions overflow")))?;
        let data = r
            .take(size, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data).map_err(|e| Error::GvckFormat(e.to_string()))?));
    }
    if r.pos != bytes.len() {
        return Err(Error::GvckFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Overwrites the store's parameters with the checkpoint's. Every stored
/// parameter must be present with a matching shape.
pub fn load_checkpoint_bytes(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let params = decode_checkpoint(bytes)?;
    if params.len() != store.len() {
        return Err(Error::GvckFormat(format!(
            "checkpoint has {} parameters, model {}",
            params.len(),
            store.len()
        )));
    }
    for (name, t) in params {
        store.set(&name, t)?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(store, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Init, ParamGroup, RngStream};

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = RngStream::new(1, "init");
        s.add("b.weight", &[2, 3], Init::Normal(1.0), ParamGroup::Backbone, &mut rng);
        s.add("a.gamma", &[1], Init::Constant(0.25), ParamGroup::Grounding, &mut rng);
        s
    }

    #[test]
    fn layout_and_order() {
        let bytes = encode_checkpoint(&store());
        assert_eq!(&bytes[..4], b"GVCK");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..14], &[7, 0]);
        assert_eq!(&bytes[14..21], b"a.gamma");
        let decoded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(decoded[0].0, "a.gamma");
        assert_eq!(decoded[1].1.shape(), &[2, 3]);
    }

    #[test]
    fn round_trip_is_bit_exact_after_first_save() {
        let mut s = store();
        let first = encode_checkpoint(&s);
        load_checkpoint_bytes(&mut s, &first).unwrap();
        assert_eq!(encode_checkpoint(&s), first);
    }

    #[test]
    fn malformed_inputs() {
        let good = encode_checkpoint(&store());
        for bad in [&good[..3], &good[..good.len() - 1], b"XVCK\x01\0\0\0\0\0\0\0".as_slice()] {
            assert_eq!(decode_checkpoint(bad).unwrap_err().code(), "gvck-format");
        }
        let mut versioned = good.clone();
        versioned[4] = 9;
        assert_eq!(decode_checkpoint(&versioned).unwrap_err().code(), "gvck-format");
        let mut other = ParamStore::new();
        assert_eq!(load_checkpoint_bytes(&mut other, &good).unwrap_err().code(), "gvck-format");
    }
}
