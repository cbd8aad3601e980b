//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `GTCK`, u32 version, u64 config length,
//! encoder config JSON, u32 tensor count, then per tensor: u32 name length,
//! UTF-8 name, u32 rows, u32 cols, rows·cols f32 values row-major.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Encoder, EncoderConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn malformed(message: impl Into<String>) -> Error {
    Error::MalformedFile {
        format: "checkpoint",
        message: message.into(),
    }
}

pub fn encode_checkpoint(encoder: &Encoder) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&encoder.config)?;
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    let tensors = encoder.params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| malformed("truncated"))?;
        let out = &self.bytes[self.pos..end];
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

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Encoder> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let config_len = usize::try_from(c.u64()?).map_err(|_| malformed("config length"))?;
    let config: EncoderConfig = serde_json::from_slice(c.take(config_len)?)?;
    let mut encoder = Encoder::init(config, 0)?;
    let names: Vec<(String, (usize, usize))> = encoder
        .params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.dim()))
        .collect();
    let count = c.u32()? as usize;
    if count != names.len() {
        return Err(malformed(format!("expected {} tensors, found {count}", names.len())));
    }
    for ((expected, shape), slot) in names.iter().zip(encoder.params.tensors_mut()) {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| malformed("tensor name is not UTF-8"))?;
        if name != expected {
            return Err(malformed(format!("expected tensor {expected}, found {name}")));
        }
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        if (rows, cols) != *shape {
            return Err(malformed(format!(
                "tensor {name} has shape {rows}x{cols}, expected {}x{}",
                shape.0, shape.1
            )));
        }
        let raw = c.take(rows * cols * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        *slot = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
    }
    if c.pos != bytes.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(encoder)
}

pub fn save_checkpoint(encoder: &Encoder, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(encoder)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Encoder> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
