//! Cloud checkpoints: `SIDG1` magic, `u32` count, then per Gaussian the 14
//! parameters as little-endian `f32` in declaration order (position,
//! log-scale, rotation `w x y z`, opacity logit, color).

use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::scene::{Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};

pub const MAGIC: &[u8; 5] = b"SIDG1";

pub fn encode_cloud(cloud: &GaussianCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + cloud.len() * PARAMS_PER_GAUSSIAN * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for g in &cloud.gaussians {
        for v in g.to_params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<GaussianCloud> {
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::Format {
            what: "cloud checkpoint",
            message: "missing `SIDG1` magic".into(),
        });
    }
    let count = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let payload = &bytes[9..];
    let expected = count * PARAMS_PER_GAUSSIAN * 4;
    if payload.len() != expected {
        return Err(Error::ByteCount {
            expected,
            actual: payload.len(),
        });
    }
    let gaussians = payload
        .chunks_exact(PARAMS_PER_GAUSSIAN * 4)
        .map(|rec| {
            let mut p = [0.0; PARAMS_PER_GAUSSIAN];
            for (k, c) in rec.chunks_exact(4).enumerate() {
                p[k] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            }
            Gaussian3D::from_params(&p)
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

/// Rounds every parameter to `f32`, the precision a checkpoint stores.
pub fn round_to_storage(cloud: &GaussianCloud) -> GaussianCloud {
    let mut out = cloud.clone();
    for g in &mut out.gaussians {
        let p = g.to_params().map(|v| v as f32 as f64);
        *g = Gaussian3D::from_params(&p);
    }
    out
}

pub fn write_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    std::fs::write(path, encode_cloud(cloud)).map_err(io_err(path))
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    decode_cloud(&std::fs::read(path).map_err(io_err(path))?)
}
