//! The `FTNSR1` tensor container.
//!
//! Layout: 6-byte ASCII magic `FTNSR1`, one dtype byte (`0x01` = f64), one
//! ndim byte (at most 8), `ndim` little-endian `u64` extents, then the
//! row-major little-endian payload. Nothing follows the payload.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"FTNSR1";
pub const DTYPE_F64: u8 = 0x01;
pub const MAX_NDIM: usize = 8;

#[derive(Debug, Error)]
pub enum FtnsrError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported dtype code {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingData(usize),
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    assert!(t.ndim() <= MAX_NDIM, "FTNSR1 supports at most {MAX_NDIM} dims");
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F64);
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, FtnsrError> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(FtnsrError::BadMagic);
    }
    if bytes[6] != DTYPE_F64 {
        return Err(FtnsrError::UnsupportedDtype(bytes[6]));
    }
    let ndim = bytes[7] as usize;
    if ndim > MAX_NDIM {
        return Err(FtnsrError::DimOverflow(format!("ndim {ndim} exceeds {MAX_NDIM}")));
    }
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(FtnsrError::TruncatedPayload {
            expected: header,
            found: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for k in 0..ndim {
        let raw = u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let d = usize::try_from(raw)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| FtnsrError::DimOverflow(format!("extent {raw} on axis {k}")))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| FtnsrError::DimOverflow("element count overflows".into()))?;
        dims.push(d);
    }
    let payload = count
        .checked_mul(8)
        .ok_or_else(|| FtnsrError::DimOverflow("payload size overflows".into()))?;
    let body = &bytes[header..];
    if body.len() < payload {
        return Err(FtnsrError::TruncatedPayload {
            expected: payload,
            found: body.len(),
        });
    }
    if body.len() > payload {
        return Err(FtnsrError::TrailingData(body.len() - payload));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(dims, data).expect("validated shape"))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<(), FtnsrError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, FtnsrError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
