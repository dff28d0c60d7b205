//! Row-major pixel buffers shared by the renderer, the losses and the IO layer.

use crate::error::{Error, Result};

/// Interleaved RGB image, row-major, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Single-channel map (depth, accumulated alpha, gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                left: width * height * 3,
                right: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, rect: Rect) -> Image {
        let mut out = Image::new(rect.width, rect.height);
        for row in 0..rect.height {
            let src = ((rect.y + row) * self.width + rect.x) * 3;
            let dst = row * rect.width * 3;
            out.data[dst..dst + rect.width * 3]
                .copy_from_slice(&self.data[src..src + rect.width * 3]);
        }
        out
    }

    /// Adds `patch` into the region `rect`; the inverse of [`Image::crop`] for gradients.
    pub fn accumulate(&mut self, rect: Rect, patch: &Image) {
        for row in 0..rect.height {
            let dst = ((rect.y + row) * self.width + rect.x) * 3;
            let src = row * rect.width * 3;
            for k in 0..rect.width * 3 {
                self.data[dst + k] += patch.data[src + k];
            }
        }
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

impl Map {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                left: width * height,
                right: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn check_same_dims(&self, other: &Map) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

impl Rect {
    /// Square crop of side `size` whose top-left corner sits at normalized
    /// coordinates `(u, v)` of the free range; identical `(u, v)` give matching
    /// crops on images of equal size.
    pub fn at_normalized(width: usize, height: usize, size: usize, u: f64, v: f64) -> Rect {
        let side = size.min(width).min(height);
        let x = ((width - side) as f64 * u.clamp(0.0, 1.0)).floor() as usize;
        let y = ((height - side) as f64 * v.clamp(0.0, 1.0)).floor() as usize;
        Rect {
            x,
            y,
            width: side,
            height: side,
        }
    }
}
