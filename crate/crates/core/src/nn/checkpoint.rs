//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"INKGCKPT"            8-byte magic
//! u32 LE                 format version (1)
//! u64 LE                 header length in bytes
//! header                 UTF-8 JSON: {kind, spec, alphabet, dtype, tensors:[{name, shape, offset, len}]}
//! blobs                  little-endian f32 data; `offset` is in bytes from the start of this section
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"INKGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    spec: serde_json::Value,
    alphabet: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

/// In-memory form of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub spec: serde_json::Value,
    pub alphabet: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .params
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset, len: t.len() };
                offset += 4 * t.len();
                e
            })
            .collect();
        let header = Header { kind: self.kind.clone(), spec: self.spec.clone(), alphabet: self.alphabet.clone(), dtype: "f32".into(), tensors };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.params.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let bad = |m: &str| CheckpointError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_bytes = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(CheckpointError::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let blobs = &bytes[20 + hlen..];
        let mut params = ParamSet::default();
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Format(format!("tensor {} shape/len mismatch", e.name)));
            }
            let raw = blobs.get(e.offset..e.offset + 4 * e.len).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(Tensor { name: e.name, shape: e.shape, data });
        }
        Ok(Checkpoint { kind: header.kind, spec: header.spec, alphabet: header.alphabet, params })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}
