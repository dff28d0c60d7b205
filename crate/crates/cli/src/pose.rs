//! Single-camera pose files for `render`.
//!
//! One non-comment line of 13 numbers:
//! `fx fy cx cy width height qw qx qy qz tx ty tz`, with the quaternion and
//! translation in the world-to-camera convention of `images.txt`.

use std::path::Path;

use anyhow::{bail, Context, Result};

use sparsesplat::scene::{Camera, Quat, Vec3};

pub fn parse_pose(text: &str) -> Result<Camera> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .context("pose file has no pose line")?;
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().with_context(|| format!("invalid number `{t}`")))
        .collect::<Result<_>>()?;
    if v.len() != 13 {
        bail!("pose line needs 13 numbers, found {}", v.len());
    }
    if v[4] < 1.0 || v[5] < 1.0 || v[4].fract() != 0.0 || v[5].fract() != 0.0 {
        bail!("width and height must be positive integers");
    }
    let camera = Camera::from_pose(
        v[0],
        v[1],
        v[2],
        v[3],
        v[4] as usize,
        v[5] as usize,
        Quat::new(v[6], v[7], v[8], v[9]),
        Vec3::new(v[10], v[11], v[12]),
    )?;
    camera.validate()?;
    Ok(camera)
}

pub fn read_pose(path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pose(&text).with_context(|| format!("in {}", path.display()))
}
