//! Grayscale Portable Float Map (`Pf`) reader and writer.
//!
//! Rows are stored bottom to top. A negative scale marks little-endian data,
//! positive big-endian; the magnitude is ignored.

use std::path::Path;

use crate::buffer::Map;
use crate::error::{io_err, Error, Result};
use crate::priors::DepthMap;

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        what: "PFM header",
        message: message.into(),
    }
}

pub fn encode_pfm(depth: &DepthMap) -> Result<Vec<u8>> {
    let map = &depth.map;
    if let Some(i) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("PFM values must be finite (pixel {i})")));
    }
    let header = format!("Pf\n{} {}\n-1.0\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + map.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..map.height).rev() {
        for v in &map.data[y * map.width..(y + 1) * map.width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(format_err(format!("expected grayscale magic `Pf`, found `{magic}`")));
    }
    let width: usize = token()?.parse().map_err(|_| format_err("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| format_err("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| format_err("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(format!("scale must be non-zero, found {scale}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err("missing separator after scale"));
    }
    let payload = &bytes[pos + 1..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(Error::ByteCount {
            expected,
            actual: payload.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, x) = (k / width, k % width);
        data[(height - 1 - file_row) * width + x] = v as f64;
    }
    Ok(DepthMap::new(Map::from_data(width, height, data)?))
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes = encode_pfm(depth)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_pfm(&bytes)
}
