//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CDTN" | u8 version = 1 | u8 dtype (0 = f32, 1 = f64) | u16 ndim | ndim x u64 extents | payload
//! ```
//!
//! The payload is the row-major element buffer in little-endian byte order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CDTN";
pub const VERSION: u8 = 1;

/// A tensor of either supported element type.
#[derive(Debug, Clone, PartialEq)]
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

    /// Converts to the requested element type.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.extend_from_slice(&(t.ndim() as u16).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn decode_payload<T: Scalar>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let bad = |msg: String| Error::Format(format!("tensor file: {msg}"));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing CDTN magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(bad(format!("unknown dtype {other}"))),
    };
    let ndim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| bad("extent product overflows".into()))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != count.checked_mul(dtype.size()) {
        return Err(bad(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count.saturating_mul(dtype.size())
        )));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(shape, payload)?),
        DType::F64 => AnyTensor::F64(decode_payload(shape, payload)?),
    })
}

pub fn write<T: Scalar>(mut writer: impl Write, t: &Tensor<T>) -> Result<()> {
    writer.write_all(&encode(t))?;
    Ok(())
}

pub fn read(mut reader: impl Read) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&std::fs::read(path)?)
}
