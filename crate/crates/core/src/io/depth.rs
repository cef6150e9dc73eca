//! Depth grids: magic `DPTH`, width, height and a reserved word as
//! little-endian `u32`, then row-major little-endian `f32` depths. NaN marks
//! invalid pixels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::DepthMap;

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * d.data.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &d.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 16 {
        return Err(Error::format("depth", "file shorter than its 16-byte header"));
    }
    if &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::format("depth", "bad magic, expected DPTH"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("depth", "dimensions overflow"))?;
    if bytes.len() - 16 != expected {
        return Err(Error::format(
            "depth",
            format!("{}x{} grid needs {expected} data bytes, found {}", w, h, bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthMap::from_data(w, h, data)
}

pub fn save_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    std::fs::write(path, encode_depth(d))?;
    Ok(())
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth(&std::fs::read(path)?)
}
