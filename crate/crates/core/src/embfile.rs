//! `EMB1` embedding files: magic `EMB1`, little-endian `u32` row count and
//! dimension, `n * d` little-endian `f32` values row-major, then `n` image ids,
//! each a little-endian `u32` byte length followed by UTF-8 bytes.

use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::param(format!(
                "{} ids x {dim} dims needs {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        Ok(Self { ids, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn encode(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| 4 + s.len()).sum();
        let mut out = Vec::with_capacity(12 + 4 * self.data.len() + id_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected `EMB1`"),
            });
        }
        let n = cur.u32("row count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 8,
                message: "dimension is zero".into(),
            });
        }
        let values = n.checked_mul(dim).ok_or_else(|| Error::Format {
            offset: 4,
            message: "row count times dimension overflows".into(),
        })?;
        let raw = cur.take(values.saturating_mul(4), "vector data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = cur.u32("id length")? as usize;
            let at = cur.pos;
            let raw = cur.take(len, "id bytes")?;
            let id = std::str::from_utf8(raw).map_err(|e| Error::Format {
                offset: at,
                message: format!("image id is not UTF-8: {e}"),
            })?;
            ids.push(id.to_string());
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos,
                message: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        Ok(Self { ids, dim, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::file(path, e))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.bytes.len(),
                message: format!(
                    "truncated {what}: needed {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
