//! IDX tensors (the MNIST / Fashion-MNIST distribution format).
//!
//! Layout, all integers big-endian: a 4-byte magic `00 00 <type> <rank>`,
//! then one u32 per dimension, then the payload. Only unsigned-byte tensors
//! of rank 3 (images, magic `0x00000803`) and rank 1 (labels, `0x00000801`)
//! are accepted. Gzip-compressed files are decompressed transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("magic: expected 0x00000803 or 0x00000801, found {0:#010x}")]
    Magic(u32),
    #[error("header: file ends inside the {field} field")]
    Header { field: String },
    #[error("payload: dimensions {dims:?} overflow the addressable size")]
    DimensionOverflow { dims: Vec<u32> },
    #[error("payload: expected {expected} bytes, found {found}")]
    Payload { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Uncompressed IDX encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: impl FnOnce() -> String) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Header { field: field() })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    let magic = read_u32(bytes, 0, || "magic".into())?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(IdxError::Magic(other)),
    };
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * i, || format!("dimension {i}"))?);
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| IdxError::DimensionOverflow { dims: dims.clone() })?;
    let payload = &bytes[4 + 4 * rank..];
    if payload.len() != expected {
        return Err(IdxError::Payload {
            expected,
            found: payload.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

/// Reads a whole file, gunzipping it if it starts with the gzip magic.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, std::io::Error> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor, IdxError> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_idx(&bytes)
}
