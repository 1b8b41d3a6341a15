//! Raw little-endian `f32` matrices with a 16-byte header:
//! `b"MILF32\0\0"`, rows (`u32`), cols (`u32`).

use std::fs;
use std::path::Path;

use crate::error::{MilError, Result};

pub const F32_MAGIC: &[u8; 8] = b"MILF32\0\0";
const HEADER_LEN: usize = 16;

pub fn encode_f32_matrix(rows: usize, cols: usize, data: &[f32]) -> Result<Vec<u8>> {
    if rows * cols != data.len() {
        return Err(MilError::Input(format!(
            "matrix {rows}×{cols} needs {} values, got {}",
            rows * cols,
            data.len()
        )));
    }
    let (r, c) = (u32::try_from(rows), u32::try_from(cols));
    let (Ok(r), Ok(c)) = (r, c) else {
        return Err(MilError::Input("matrix too large for a u32 header".into()));
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(F32_MAGIC);
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_f32_matrix(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(MilError::format(
            path,
            format!("truncated header: {} bytes, expected at least {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[..8] != F32_MAGIC {
        return Err(MilError::format(path, "bad magic at byte 0, expected MILF32"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows * cols * 4;
    if payload.len() != expected {
        return Err(MilError::format(
            path,
            format!(
                "payload at byte {HEADER_LEN} is {} bytes, header declares {rows}×{cols} ({expected} bytes)",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(MilError::format(
            path,
            format!("non-finite value at byte {}", HEADER_LEN + 4 * pos),
        ));
    }
    Ok((rows, cols, data))
}

pub fn write_f32_matrix(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    let bytes = encode_f32_matrix(rows, cols, data)?;
    fs::write(path, bytes).map_err(|e| MilError::io(path, e))
}

pub fn read_f32_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| MilError::io(path, e))?;
    decode_f32_matrix(&bytes, path)
}
