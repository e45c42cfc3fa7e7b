//! Versioned binary checkpoint format: a JSON config header followed by
//! named tensors (name, shape, row-major little-endian f64 values).
//! Writes are byte-stable for identical inputs, so files can be hashed
//! for provenance.

use std::fs;
use std::path::Path;

use crate::corpus::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::Parameter;

const MAGIC: &[u8; 8] = b"TNHGTSR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn from_parameter(p: &Parameter) -> Result<TensorEntry> {
        if !p.all_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("checkpoint of parameter {}", p.name()),
            });
        }
        Ok(TensorEntry {
            name: p.name().to_string(),
            rows: p.rows(),
            cols: p.cols(),
            data: p.value().to_vec(),
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a header value plus tensors into the container format.
pub fn to_bytes(header: &serde_json::Value, tensors: &[TensorEntry]) -> Vec<u8> {
    let header_bytes = serde_json::to_vec(header).expect("header serialization");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, header_bytes.len() as u32);
    out.extend_from_slice(&header_bytes);
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        let name = t.name.as_bytes();
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name);
        put_u64(&mut out, t.rows as u64);
        put_u64(&mut out, t.cols as u64);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint {
                path: self.path.clone(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8], path: &str) -> Result<(serde_json::Value, Vec<TensorEntry>)> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path: path.to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint {
            path: path.into(),
            msg: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            path: path.into(),
            msg: format!("unsupported version {version}"),
        });
    }
    let hlen = r.u32()? as usize;
    let header: serde_json::Value =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Checkpoint {
            path: path.into(),
            msg: format!("bad header: {e}"),
        })?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Checkpoint {
            path: path.into(),
            msg: "tensor name is not utf-8".into(),
        })?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint {
                path: path.into(),
                msg: format!("tensor {name} dimension overflow"),
            })?;
        let raw = r.take(n * 8)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Checkpoint {
                    path: path.into(),
                    msg: format!("tensor {name} contains a non-finite value"),
                });
            }
            data.push(v);
        }
        tensors.push(TensorEntry {
            name,
            rows,
            cols,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            path: path.into(),
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok((header, tensors))
}

pub fn write_file(
    path: impl AsRef<Path>,
    header: &serde_json::Value,
    tensors: &[TensorEntry],
) -> Result<Vec<u8>> {
    let bytes = to_bytes(header, tensors);
    fs::write(path.as_ref(), &bytes).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(bytes)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<TensorEntry>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Pulls a named string field out of a checkpoint header.
pub fn header_str<'a>(header: &'a serde_json::Value, key: &str, path: &str) -> Result<&'a str> {
    header
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Checkpoint {
            path: path.into(),
            msg: format!("header missing string field `{key}`"),
        })
}
