//! On-disk formats: the binary tensor file and PGM/PPM export.
//!
//! Tensor file layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `LLTENSOR`                        |
//! | 8      | 4    | dtype code, u32: 1 = float32, 2 = float64 |
//! | 12     | 8    | height, u64                             |
//! | 20     | 8    | width, u64                              |
//! | 28     | 8    | channels, u64                           |
//! | 36     | n·s  | payload, row-major channel-last values  |
//!
//! where `n = height·width·channels` and `s` is 4 or 8 bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

pub const MAGIC: &[u8; 8] = b"LLTENSOR";
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes a tensor into the tensor-file byte layout.
pub fn encode_tensor(t: &ImageTensor, dtype: Dtype) -> Vec<u8> {
    let d = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dtype.code().to_le_bytes());
    for v in [d.height, d.width, d.channels] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => t
            .as_slice()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .as_slice()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u64(bytes: &[u8], offset: usize) -> Result<u64> {
    let raw = bytes
        .get(offset..offset + 8)
        .ok_or_else(|| format_err(offset, "truncated header"))?;
    Ok(u64::from_le_bytes(raw.try_into().expect("8-byte slice")))
}

/// Parses the tensor-file byte layout. Values are widened to f64.
pub fn decode_tensor(bytes: &[u8]) -> Result<(ImageTensor, Dtype)> {
    let magic = bytes
        .get(..8)
        .ok_or_else(|| format_err(bytes.len(), "truncated magic"))?;
    if magic != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let code = bytes
        .get(8..12)
        .ok_or_else(|| format_err(8, "truncated dtype"))?;
    let code = u32::from_le_bytes(code.try_into().expect("4-byte slice"));
    let dtype = Dtype::from_code(code)
        .ok_or_else(|| format_err(8, format!("unknown dtype code {code}")))?;
    let h = read_u64(bytes, 12)? as usize;
    let w = read_u64(bytes, 20)? as usize;
    let c = read_u64(bytes, 28)? as usize;
    let dims = Dims::new(h, w, c);
    if dims.validate().is_err() {
        return Err(format_err(12, format!("invalid dims {dims}")));
    }
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| format_err(12, "dims overflow"))?;
    let expected = HEADER_LEN + n * dtype.size();
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect(),
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(format_err(
            HEADER_LEN + pos * dtype.size(),
            "non-finite payload value",
        ));
    }
    Ok((ImageTensor::new(dims, data)?, dtype))
}

pub fn write_tensor_as(path: &Path, t: &ImageTensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(t, dtype)).map_err(|e| Error::io(path, e))
}

/// Writes a float64 tensor file.
pub fn write_tensor(path: &Path, t: &ImageTensor) -> Result<()> {
    write_tensor_as(path, t, Dtype::F64)
}

pub fn read_tensor(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map(|(t, _)| t)
}

/// Reads a tensor file and requires its payload dtype to be `dtype`.
pub fn read_tensor_expect(path: &Path, dtype: Dtype) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, found) = decode_tensor(&bytes)?;
    if found != dtype {
        return Err(format_err(
            8,
            format!("dtype mismatch: file has {found:?}, expected {dtype:?}"),
        ));
    }
    Ok(t)
}

/// 8-bit quantization: clamp to `[0, 1]`, scale by 255, round half up.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels).
pub fn encode_pnm(t: &ImageTensor) -> Result<Vec<u8>> {
    let tag = match t.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::UnsupportedFormat(format!(
                "PNM export needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{tag}\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(t.as_slice().iter().map(|&v| quantize_u8(v)));
    Ok(out)
}

pub fn ppm_export(t: &ImageTensor, path: &Path) -> Result<()> {
    let bytes = encode_pnm(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
