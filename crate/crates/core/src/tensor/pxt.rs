//! PXT1 binary tensor files.
//!
//! Layout: magic `PXT1`, one dtype byte (0 = f32, 1 = f64), one rank byte,
//! `rank` little-endian u32 extents, then the little-endian payload in
//! row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PXT1";

pub fn write_pxt<T: Scalar, W: Write>(tensor: &Tensor<T>, mut out: W) -> Result<()> {
    let rank = u8::try_from(tensor.ndim())
        .map_err(|_| Error::shape(format!("rank {} does not fit PXT1 header", tensor.ndim())))?;
    let mut buf = Vec::with_capacity(6 + 4 * tensor.ndim() + T::BYTES * tensor.len());
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE);
    buf.push(rank);
    for &e in tensor.shape() {
        let e = u32::try_from(e).map_err(|_| Error::shape(format!("extent {e} exceeds u32")))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// A tensor read without knowing its dtype up front.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, widening or narrowing as needed.
    pub fn into_scalar<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

fn decode<T: Scalar>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let len: usize = shape.iter().product();
    if payload.len() != len * T::BYTES {
        return Err(Error::Corruption(format!(
            "PXT1 payload has {} bytes, expected {}",
            payload.len(),
            len * T::BYTES
        )));
    }
    let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::from_vec(&shape, data)
}

pub fn read_pxt_any<R: Read>(mut input: R) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Corruption("missing PXT1 magic".into()));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Corruption("truncated PXT1 header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = &bytes[header..];
    match dtype {
        0 => decode::<f32>(shape, payload).map(AnyTensor::F32),
        1 => decode::<f64>(shape, payload).map(AnyTensor::F64),
        other => Err(Error::Corruption(format!("unknown PXT1 dtype code {other}"))),
    }
}

/// Reads a tensor whose dtype must match `T`.
pub fn read_pxt<T: Scalar, R: Read>(input: R) -> Result<Tensor<T>> {
    match (read_pxt_any(input)?, T::DTYPE) {
        (AnyTensor::F32(t), 0) => Ok(t.cast()),
        (AnyTensor::F64(t), 1) => Ok(t.cast()),
        (other, _) => Err(Error::Contract(format!(
            "PXT1 dtype does not match requested {:?} scalar mode (shape {:?})",
            T::MODE,
            other.shape()
        ))),
    }
}

pub fn write_pxt_file<T: Scalar>(tensor: &Tensor<T>, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_pxt(tensor, std::io::BufWriter::new(file))
}

pub fn read_pxt_file<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    read_pxt(std::io::BufReader::new(fs::File::open(path)?))
}
