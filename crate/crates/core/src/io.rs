//! Binary tensor files.
//!
//! Layout: magic `C2AT`, `u32` version (1), `u32` dtype code (0 = f64,
//! 1 = u16), `u32` ndim, `ndim` x `u64` dims, then the little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LabelTensor, Tensor};

pub const MAGIC: &[u8; 4] = b"C2AT";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 0;
pub const DTYPE_U16: u32 = 1;

fn header(dtype: u32, dims: &[usize]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * dims.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dtype.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = header(DTYPE_F64, t.dims());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_labels(t: &LabelTensor) -> Vec<u8> {
    let mut buf = header(DTYPE_U16, t.dims());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the header, checks the dtype and returns dims plus payload bytes.
fn decode_header(buf: &[u8], expected_dtype: u32, elem: usize) -> Result<(Vec<usize>, &[u8])> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < 4 || r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let dtype = r.u32()?;
    if dtype != DTYPE_F64 && dtype != DTYPE_U16 {
        return Err(Error::UnknownDType(dtype));
    }
    if dtype != expected_dtype {
        return Err(Error::DTypeMismatch {
            expected: expected_dtype,
            found: dtype,
        });
    }
    let ndim = r.u32()? as usize;
    if ndim == 0 {
        return Err(Error::InvalidArgument("tensor file with empty dims".into()));
    }
    let dims = (0..ndim)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::Truncated)?;
    let payload = r.take(count.checked_mul(elem).ok_or(Error::Truncated)?)?;
    Ok((dims, payload))
}

pub fn decode_tensor(buf: &[u8]) -> Result<Tensor> {
    let (dims, payload) = decode_header(buf, DTYPE_F64, 8)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&dims, data)
}

pub fn decode_labels(buf: &[u8]) -> Result<LabelTensor> {
    let (dims, payload) = decode_header(buf, DTYPE_U16, 2)?;
    let data = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelTensor::from_vec(&dims, data)
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_label_file(path: impl AsRef<Path>, t: &LabelTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(t)).map_err(|e| Error::io(path, e))
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<LabelTensor> {
    let path = path.as_ref();
    decode_labels(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
