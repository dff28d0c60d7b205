//! Feature embedding files: `FEMB` magic, `u32` dimension, `f32` values (little-endian).

use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::priors::FeatureEmbedding;

pub const MAGIC: &[u8; 4] = b"FEMB";

pub fn encode_femb(e: &FeatureEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + e.dim() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
    for v in &e.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_femb(bytes: &[u8]) -> Result<FeatureEmbedding> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            what: "FEMB header",
            message: "missing `FEMB` magic".into(),
        });
    }
    let dim = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let payload = &bytes[8..];
    if payload.len() != dim * 4 {
        return Err(Error::ByteCount {
            expected: dim * 4,
            actual: payload.len(),
        });
    }
    Ok(FeatureEmbedding::new(
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    ))
}

pub fn write_femb(path: &Path, e: &FeatureEmbedding) -> Result<()> {
    std::fs::write(path, encode_femb(e)).map_err(io_err(path))
}

pub fn read_femb(path: &Path) -> Result<FeatureEmbedding> {
    decode_femb(&std::fs::read(path).map_err(io_err(path))?)
}
