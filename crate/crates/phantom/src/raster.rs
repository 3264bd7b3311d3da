//! Raster tensor files.
//!
//! Layout (little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `DCLT` |
//! | 4     | version = 1 |
//! | 5     | precision: 1 = single, 2 = double |
//! | 6     | rank r ≤ 4 |
//! | 7     | reserved = 0 |
//! | ..    | r × u32 dims |
//! | ..    | u16 name length, UTF-8 name |
//! | ..    | row-major IEEE-754 payload |

use std::fs;
use std::path::Path;

use tensorgrad::{Precision, Real, Tensor};

use crate::error::{DataError, Result};

pub const RASTER_MAGIC: [u8; 4] = *b"DCLT";
pub const RASTER_VERSION: u8 = 1;
const MAX_RANK: usize = 4;

fn precision_code(p: Precision) -> u8 {
    match p {
        Precision::Single => 1,
        Precision::Double => 2,
    }
}

pub fn encode_raster<T: Real>(name: &str, tensor: &Tensor<T>) -> Result<Vec<u8>> {
    if tensor.rank() > MAX_RANK {
        return Err(DataError::RankTooLarge(tensor.rank()));
    }
    if name.len() > u16::MAX as usize {
        return Err(DataError::NameTooLong(name.len()));
    }
    let width = match T::PRECISION {
        Precision::Single => 4,
        Precision::Double => 8,
    };
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 2 + name.len() + width * tensor.numel());
    out.extend_from_slice(&RASTER_MAGIC);
    out.push(RASTER_VERSION);
    out.push(precision_code(T::PRECISION));
    out.push(tensor.rank() as u8);
    out.push(0);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| DataError::DimOverflow(vec![d as u64]))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    for &x in tensor.data() {
        match T::PRECISION {
            Precision::Single => out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
            Precision::Double => out.extend_from_slice(&x.as_f64().to_le_bytes()),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(DataError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode_raster<T: Real>(bytes: &[u8]) -> Result<(String, Tensor<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    let header = r.take(8, "header")?;
    let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
    if magic != RASTER_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    if header[4] != RASTER_VERSION {
        return Err(DataError::UnsupportedVersion(header[4]));
    }
    let (stored, width) = match header[5] {
        1 => (Precision::Single, 4usize),
        2 => (Precision::Double, 8usize),
        other => return Err(DataError::UnsupportedPrecision(other)),
    };
    if stored != T::PRECISION {
        return Err(DataError::PrecisionMismatch {
            stored: stored.as_str(),
            requested: T::PRECISION.as_str(),
        });
    }
    let rank = header[6] as usize;
    if rank > MAX_RANK {
        return Err(DataError::RankTooLarge(rank));
    }
    if header[7] != 0 {
        return Err(DataError::Reserved(header[7]));
    }
    let dims: Vec<u64> = r
        .take(4 * rank, "dimensions")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as u64)
        .collect();
    let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
    let name = std::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|_| DataError::BadName)?
        .to_owned();
    let payload_bytes = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(width as u64))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| DataError::DimOverflow(dims.clone()))?;
    let payload = r.take(payload_bytes, "payload")?;
    let trailing = bytes.len() - r.pos;
    if trailing != 0 {
        return Err(DataError::TrailingBytes(trailing));
    }
    let data: Vec<T> = match stored {
        Precision::Single => payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        Precision::Double => payload
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    };
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    Ok((name, Tensor::new(shape, data)?))
}

pub fn write_raster<T: Real>(path: &Path, name: &str, tensor: &Tensor<T>) -> Result<()> {
    let bytes = encode_raster(name, tensor)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_raster<T: Real>(path: &Path) -> Result<(String, Tensor<T>)> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_raster(&bytes)
}
