//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `MAGIC`, `u32` version, `u64` header length, JSON header, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, `f64` data in row-major order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

const PARAM: &str = "param/";
const FIRST: &str = "adam.m/";
const SECOND: &str = "adam.v/";
const EXTRA: &str = "extra/";

/// Parameters with optimizer state, caller metadata, and auxiliary tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParameterStore,
    pub extra: Vec<(String, Array2<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    adam_step: u64,
    frozen: Vec<String>,
}

fn put_tensor(w: &mut impl Write, name: &str, t: &Array2<f64>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&2u32.to_le_bytes())?;
    for d in t.shape() {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in t.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let header = Header {
        meta: ckpt.meta.clone(),
        adam_step: p.adam.step,
        frozen: p.ids().filter(|&id| p.is_frozen(id)).map(|id| p.name(id).to_string()).collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let count = 3 * p.len() + ckpt.extra.len();
    let result = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(count as u32).to_le_bytes())?;
        for id in p.ids() {
            put_tensor(&mut w, &format!("{PARAM}{}", p.name(id)), p.value(id))?;
        }
        for id in p.ids() {
            put_tensor(&mut w, &format!("{FIRST}{}", p.name(id)), &p.adam.first[id.0])?;
            put_tensor(&mut w, &format!("{SECOND}{}", p.name(id)), &p.adam.second[id.0])?;
        }
        for (name, t) in &ckpt.extra {
            put_tensor(&mut w, &format!("{EXTRA}{name}"), t)?;
        }
        w.flush()
    })();
    result.map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(bad("not a checkpoint file"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = usize::try_from(c.u64()?).map_err(|_| bad("header too large"))?;
    let header: Header = serde_json::from_slice(c.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
    let count = c.u32()? as usize;

    let mut params = ParameterStore::new();
    let mut moments = Vec::new();
    let mut extra = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = c.u32()?;
        if rank != 2 {
            return Err(bad(format!("tensor `{name}` has rank {rank}")));
        }
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| bad("tensor too large"))?;
        let data: Vec<f64> = c.take(n)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        if let Some(n) = name.strip_prefix(PARAM) {
            if params.id(n).is_some() {
                return Err(bad(format!("duplicate parameter `{n}`")));
            }
            params.insert(n, t);
        } else if let Some(n) = name.strip_prefix(FIRST) {
            moments.push((n.to_string(), true, t));
        } else if let Some(n) = name.strip_prefix(SECOND) {
            moments.push((n.to_string(), false, t));
        } else if let Some(n) = name.strip_prefix(EXTRA) {
            extra.push((n.to_string(), t));
        } else {
            return Err(bad(format!("unknown tensor `{name}`")));
        }
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    for (name, first, t) in moments {
        let id = params.id(&name).ok_or_else(|| bad(format!("moment for unknown parameter `{name}`")))?;
        if t.dim() != params.value(id).dim() {
            return Err(bad(format!("moment shape mismatch for `{name}`")));
        }
        if first {
            params.adam.first[id.0] = t;
        } else {
            params.adam.second[id.0] = t;
        }
    }
    params.adam.step = header.adam_step;
    for name in &header.frozen {
        let id = params.id(name).ok_or_else(|| bad(format!("unknown frozen parameter `{name}`")))?;
        params.set_frozen(id, true);
    }
    Ok(Checkpoint { meta: header.meta, params, extra })
}
