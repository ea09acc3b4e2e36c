//! HTRT tensor container: a minimal binary format for dense f32 tensors.
//!
//! Layout: magic `HTRT`, version byte (1), dtype byte (0 = f32 little
//! endian), ndim byte, ndim u32 little-endian extents, then the row-major
//! payload. Round trips are byte-exact.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HTRT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 0;

/// Serializes a tensor into container bytes.
pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + tensor.dims().len() * 4 + tensor.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32_LE);
    out.push(tensor.dims().len() as u8);
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses container bytes back into a tensor, validating every header
/// field and the exact payload length.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 7 {
        return Err(Error::TruncatedPayload {
            expected: 7,
            actual: bytes.len(),
        });
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let dtype = bytes[5];
    if dtype != DTYPE_F32_LE {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = bytes[6] as usize;
    let header_len = 7 + ndim * 4;
    if bytes.len() < header_len {
        return Err(Error::TruncatedPayload {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let start = 7 + i * 4;
        let extent = u32::from_le_bytes(bytes[start..start + 4].try_into().expect("4 bytes"));
        dims.push(extent as usize);
    }
    let count: usize = dims.iter().product();
    let expected = header_len + count * 4;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode(tensor))?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode(&fs::read(path)?)
}
