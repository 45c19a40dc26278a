//! `SFMT` matrix files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | ASCII `SFMT`                              |
//! | 4      | dtype code (`2` = f64, `1` = f32 on read) |
//! | 5..8   | zero                                      |
//! | 8..12  | row count, `u32`                          |
//! | 12..16 | column count, `u32`                       |
//! | 16..   | row-major payload                         |
//!
//! Writers always emit dtype 2.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"SFMT";
pub const HEADER_LEN: usize = 16;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

pub fn encode<T: Real>(m: &ArrayView2<'_, T>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[DTYPE_F64, 0, 0, 0]);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &x in m.iter() {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    out
}

/// Decodes a matrix; `origin` names the source in errors.
pub fn decode<T: Real>(bytes: &[u8], origin: &Path) -> Result<Array2<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(origin, "bad magic (expected SFMT)"));
    }
    if bytes[5..8] != [0, 0, 0] {
        return Err(Error::format(origin, "reserved header bytes are not zero"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let width = match bytes[4] {
        DTYPE_F64 => 8,
        DTYPE_F32 => 4,
        other => return Err(Error::format(origin, format!("unsupported dtype code {other}"))),
    };
    let expected = HEADER_LEN + width * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!("payload size {} does not match {rows}x{cols} (expected {expected} bytes)", bytes.len()),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let values: Vec<T> = if width == 8 {
        payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect()
    };
    if !values.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(origin.display().to_string()));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

pub fn write_matrix<T: Real>(path: &Path, m: &ArrayView2<'_, T>) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix<T: Real>(path: &Path) -> Result<Array2<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
