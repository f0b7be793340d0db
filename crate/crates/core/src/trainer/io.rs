//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "QCASTMDL"
//! version  u32
//! length   u64      payload byte count
//! payload
//!   kind u8, input_channels u64, window_len u64,
//!   n_conv u32, then (kernel u64, filters u64) per block,
//!   lstm_layers u64, hidden u64, dropout f64, output_dim u64,
//!   n_tensors u32, then per tensor:
//!     name_len u32, name (utf-8), rank u32, dims u64 * rank, values f64 * prod(dims)
//! crc32    u32      of the payload bytes
//! ```
//!
//! Carried recurrent state and optimizer moments are not stored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"QCASTMDL";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_model(m: &Model) -> Vec<u8> {
    let spec = m.spec();
    let mut p = Vec::new();
    p.push(spec.kind.code());
    put_u64(&mut p, spec.input_channels as u64);
    put_u64(&mut p, spec.window_len as u64);
    put_u32(&mut p, spec.conv.len() as u32);
    for &(k, f) in &spec.conv {
        put_u64(&mut p, k as u64);
        put_u64(&mut p, f as u64);
    }
    put_u64(&mut p, spec.lstm_layers as u64);
    put_u64(&mut p, spec.hidden as u64);
    p.extend_from_slice(&spec.dropout_rate.to_le_bytes());
    put_u64(&mut p, spec.output_dim as u64);
    let tensors = m.named_tensors();
    put_u32(&mut p, tensors.len() as u32);
    for (name, t) in tensors {
        put_u32(&mut p, name.len() as u32);
        p.extend_from_slice(name.as_bytes());
        put_u32(&mut p, t.rank() as u32);
        for &d in t.shape() {
            put_u64(&mut p, d as u64);
        }
        for v in t.data() {
            p.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(p.len() + 24);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, p.len() as u64);
    let crc = crc32fast::hash(&p);
    out.extend_from_slice(&p);
    put_u32(&mut out, crc);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptModel("payload truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptModel("size field overflows".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let corrupt = |m: &str| Error::CorruptModel(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CorruptModel(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| corrupt("payload length overflows"))?;
    if bytes.len() != 20usize.saturating_add(len).saturating_add(4) {
        return Err(Error::CorruptModel(format!(
            "file is {} bytes, header declares a {len}-byte payload",
            bytes.len()
        )));
    }
    let payload = &bytes[20..20 + len];
    let stored = u32::from_le_bytes(bytes[20 + len..].try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut c = Cursor { buf: payload, pos: 0 };
    let kind = ModelKind::from_code(c.u8()?).ok_or_else(|| corrupt("unknown model kind"))?;
    let input_channels = c.usize()?;
    let window_len = c.usize()?;
    let n_conv = c.u32()? as usize;
    let mut conv = Vec::new();
    for _ in 0..n_conv {
        conv.push((c.usize()?, c.usize()?));
    }
    let spec = ModelSpec {
        kind,
        input_channels,
        window_len,
        conv,
        lstm_layers: c.usize()?,
        hidden: c.usize()?,
        dropout_rate: c.f64()?,
        output_dim: c.usize()?,
    };
    spec.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
    let mut model = Model::build(spec, &mut RngStream::new(0))?;

    let n = c.u32()? as usize;
    let mut seen = BTreeMap::new();
    for _ in 0..n {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| corrupt("tensor name is not utf-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.usize()?);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
        if count.checked_mul(8).is_none_or(|b| b > payload.len()) {
            return Err(corrupt("tensor larger than payload"));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(c.f64()?);
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::CorruptModel(e.to_string()))?;
        model.set_named_tensor(&name, t)?;
        if seen.insert(name.clone(), ()).is_some() {
            return Err(Error::CorruptModel(format!("tensor '{name}' appears twice")));
        }
    }
    if c.pos != payload.len() {
        return Err(corrupt("trailing bytes after last tensor"));
    }
    let expected = model.named_tensors().len();
    if seen.len() != expected {
        return Err(Error::CorruptModel(format!("file holds {} of {expected} tensors", seen.len())));
    }
    Ok(model)
}

pub fn save_model(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
