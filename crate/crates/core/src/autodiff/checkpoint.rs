//! Tensor container files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ESNDCKPT"
//! 8       4     u32 format version (1)
//! 12      8     u64 header length H in bytes
//! 20      H     UTF-8 JSON header
//! 20+H    ...   f64 values of every tensor, concatenated in table order
//! ```
//!
//! The header is `{"meta": <caller JSON>, "tensors": [{"name", "shape",
//! "offset", "count"}, ...]}` where `offset`/`count` are in values, not
//! bytes, relative to the start of the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ESNDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let table = self
            .tensors
            .iter()
            .map(|t| {
                let e = TableEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    count: t.values.len(),
                };
                offset += t.values.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: table,
        })
        .map_err(|e| Error::Format(format!("cannot encode checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(20 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..data_start])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        let data = &bytes[data_start..];
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                let numel: usize = e.shape.iter().product();
                let (start, end) = (e.offset * 8, (e.offset + e.count) * 8);
                if numel != e.count || end > data.len() {
                    return Err(Error::Format(format!("tensor `{}` is truncated or mis-shaped", e.name)));
                }
                let values = data[start..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(NamedTensor {
                    name: e.name,
                    shape: e.shape,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
