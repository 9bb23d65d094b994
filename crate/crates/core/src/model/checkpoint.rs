//! EAIW weight container.
//!
//! Layout (little-endian): magic `EAIW`, `u32` version, `u32` tensor count,
//! then per tensor `u16` name length, UTF-8 name, `u8` ndim, `u32` dims, and
//! the `f32` payload in row-major order.

use std::path::Path;

use super::params::{check_schema, ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EAIW_MAGIC: &[u8; 4] = b"EAIW";
pub const EAIW_VERSION: u32 = 1;

pub fn encode_eaiw(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + store.numel() * 4);
    out.extend_from_slice(EAIW_MAGIC);
    out.extend_from_slice(&EAIW_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("tensor name too long: {name}")))?;
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::Contract(format!("too many dims: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                field,
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode_eaiw(bytes: &[u8]) -> Result<ParamStore> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != EAIW_MAGIC {
        return Err(Error::Format {
            field: "magic",
            reason: "expected \"EAIW\"".into(),
        });
    }
    let version = c.u32("version")?;
    if version != EAIW_VERSION {
        return Err(Error::Format {
            field: "version",
            reason: format!("unsupported version {version}"),
        });
    }
    let count = c.u32("count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name_len")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format {
                field: "name",
                reason: "not UTF-8".into(),
            })?
            .to_string();
        let ndim = c.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        if ndim == 0 || n == 0 {
            return Err(Error::Format {
                field: "dims",
                reason: format!("tensor `{name}` has empty shape {shape:?}"),
            });
        }
        let payload = c.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if store.get(&name).is_some() {
            return Err(Error::Format {
                field: "name",
                reason: format!("duplicate tensor `{name}`"),
            });
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            field: "payload",
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_eaiw(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_eaiw(&bytes)
}

/// Loads a checkpoint and verifies it against `expected`, failing on any
/// missing or reshaped tensor and on unexpected ones not admitted by
/// `allow_extra`. Only tensors named in `expected` are returned.
pub fn load_checkpoint_checked(
    path: impl AsRef<Path>,
    expected: &[ParamSpec],
    allow_extra: impl Fn(&str) -> bool,
) -> Result<ParamStore> {
    let store = load_checkpoint(path)?;
    check_schema(&store.schema_entries(), expected, allow_extra)?;
    let mut out = ParamStore::new();
    for spec in expected {
        out.insert(spec.name.clone(), store.require(&spec.name)?.clone());
    }
    Ok(out)
}
