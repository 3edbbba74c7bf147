//! Flat binary matrices: a 16-byte header (8-byte magic, two `u32` sizes)
//! followed by row-major little-endian `f64` values.

use std::fs;
use std::path::Path;

use vhot_numerics::Tensor;

use crate::error::{HarnessError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"VHFEATS1";
pub const IMAGE_MAGIC: &[u8; 8] = b"VHIMAGE1";
const HEADER_LEN: usize = 16;

pub fn encode_matrix(magic: &[u8; 8], rows: u32, cols: u32, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Returns `(rows, cols, values)`.
pub fn decode_matrix(magic: &[u8; 8], bytes: &[u8], what: &str) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != magic {
        return Err(HarnessError::Data(format!("{what}: missing {:?} header", String::from_utf8_lossy(magic))));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(HarnessError::Data(format!(
            "{what}: header says {rows}x{cols} values, body holds {} bytes",
            body.len()
        )));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, cols, values))
}

/// Writes a `[T, D]` feature matrix.
pub fn write_features(path: &Path, frames: &Tensor) -> Result<()> {
    let bytes = encode_matrix(FEATURE_MAGIC, frames.rows() as u32, frames.cols() as u32, frames.data());
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let (t, d, values) = decode_matrix(FEATURE_MAGIC, &bytes, &path.display().to_string())?;
    Ok(Tensor::new(vec![t, d], values)?)
}

/// Writes a `P x P` patch grid stored `[P*P, patch_len]`; the header holds `P`.
pub fn write_image(path: &Path, grid: usize, patches: &Tensor) -> Result<()> {
    let bytes = encode_matrix(IMAGE_MAGIC, grid as u32, patches.cols() as u32, patches.data());
    fs::write(path, bytes)?;
    Ok(())
}

/// Returns `(P, patches [P*P, patch_len])`.
pub fn read_image(path: &Path) -> Result<(usize, Tensor)> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let what = path.display().to_string();
    if bytes.len() < HEADER_LEN || &bytes[..8] != IMAGE_MAGIC {
        return Err(HarnessError::Data(format!("{what}: missing image header")));
    }
    let grid = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let patch_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != grid * grid * patch_len * 8 {
        return Err(HarnessError::Data(format!("{what}: body does not hold {grid}x{grid} patches of {patch_len}")));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((grid, Tensor::new(vec![grid * grid, patch_len], values)?))
}
