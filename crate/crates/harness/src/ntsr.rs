//! NTSR1 binary tensor files.
//!
//! Layout: magic `NTSR1\0`, `u32` ndim (always 4), four `u32` extents
//! `(B, C, H, W)`, a `u8` dtype tag (0 = f32, 1 = f64), then row-major data.
//! All integers and scalars are little-endian.

use std::fs;
use std::path::Path;

use msfuse_core::{DType, Tensor};

pub const MAGIC: &[u8; 6] = b"NTSR1\0";
pub const HEADER_LEN: usize = MAGIC.len() + 4 + 4 * 4 + 1;

#[derive(Debug, thiserror::Error)]
pub enum NtsrError {
    #[error("bad magic: expected NTSR1\\0")]
    BadMagic,
    #[error("unsupported ndim {0}, expected 4")]
    Rank(u32),
    #[error("unknown dtype tag {0}")]
    DType(u8),
    #[error("truncated NTSR1 file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    Trailing { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] msfuse_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A tensor of either supported element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

fn tag(dtype: DType) -> u8 {
    match dtype {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn header(shape: [usize; 4], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(tag(dtype));
    out
}

pub fn encode_f32(t: &Tensor<f32>) -> Result<Vec<u8>, NtsrError> {
    let mut out = header(t.dims4()?, DType::F32);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_f64(t: &Tensor<f64>) -> Result<Vec<u8>, NtsrError> {
    let mut out = header(t.dims4()?, DType::F64);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode(t: &AnyTensor) -> Result<Vec<u8>, NtsrError> {
    match t {
        AnyTensor::F32(t) => encode_f32(t),
        AnyTensor::F64(t) => encode_f64(t),
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor, NtsrError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NtsrError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(NtsrError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let ndim = u32_at(bytes, 6);
    if ndim != 4 {
        return Err(NtsrError::Rank(ndim));
    }
    let shape: Vec<usize> = (0..4).map(|i| u32_at(bytes, 10 + 4 * i) as usize).collect();
    let width = match bytes[26] {
        0 => 4,
        1 => 8,
        t => return Err(NtsrError::DType(t)),
    };
    let count: usize = shape.iter().product();
    let expected = HEADER_LEN + count * width;
    if bytes.len() < expected {
        return Err(NtsrError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(NtsrError::Trailing {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[HEADER_LEN..];
    Ok(if width == 4 {
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        AnyTensor::F32(Tensor::from_vec(&shape, data)?)
    } else {
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        AnyTensor::F64(Tensor::from_vec(&shape, data)?)
    })
}

pub fn read(path: &Path) -> Result<AnyTensor, NtsrError> {
    let bytes = fs::read(path).map_err(|source| NtsrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write(path: &Path, t: &AnyTensor) -> Result<(), NtsrError> {
    fs::write(path, encode(t)?).map_err(|source| NtsrError::Io {
        path: path.display().to_string(),
        source,
    })
}
