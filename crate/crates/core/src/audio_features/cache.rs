//! Binary matrix files: 16-byte header (`MF60`, version, rows, cols as
//! little-endian u32) followed by row-major little-endian f32 values.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"MF60";
pub const CACHE_VERSION: u32 = 1;

pub fn write_matrix_file(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = matrix.dim();
    let mut bytes = Vec::with_capacity(16 + 4 * rows * cols);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for &x in matrix.iter() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != CACHE_MAGIC {
        return Err(Error::format(path, "header", "not an MF60 matrix file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(Error::format(path, "header", format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            "payload",
            format!("{} bytes for a {rows}x{cols} matrix, expected {expected}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}
