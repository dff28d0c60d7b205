//! 8-bit RGB PNG images, normalized to `[0, 1]` on load.

use std::path::Path;

use crate::buffer::Image;
use crate::error::{Error, Result};

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_data(w as usize, h as usize, data)
}

pub fn quantize(image: &Image) -> Vec<u8> {
    image
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, quantize(image))
        .ok_or_else(|| Error::InvalidInput("image buffer has the wrong length".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}
