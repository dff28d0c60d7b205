//! Deterministic pooling-pyramid feature extractor.
//!
//! Stands in for a pretrained encoder in tests and synthetic experiments. The
//! patch is mean-centered per channel, then average-pooled onto 2×2, 4×4 and
//! 8×8 grids; the embedding is the concatenation of all cell means, each level
//! scaled by `1/√(levels·cells·3)` so that squared embedding distances are a
//! mean over levels of the mean squared cell difference. The map is linear, so
//! its vector-Jacobian product is exact.

use crate::buffer::Image;
use crate::error::{Error, Result};

use super::FeatureEmbedding;

pub const MIN_PATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyExtractor {
    pub grids: Vec<usize>,
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self { grids: vec![2, 4, 8] }
    }
}

fn bounds(extent: usize, cells: usize, i: usize) -> (usize, usize) {
    (i * extent / cells, (i + 1) * extent / cells)
}

impl ToyExtractor {
    pub fn dim(&self) -> usize {
        self.grids.iter().map(|g| g * g * 3).sum()
    }

    fn level_weight(&self, g: usize) -> f64 {
        1.0 / ((self.grids.len() * g * g * 3) as f64).sqrt()
    }

    fn check(&self, patch: &Image) -> Result<()> {
        let need = self.grids.iter().copied().max().unwrap_or(1).max(MIN_PATCH);
        if patch.width < need || patch.height < need {
            return Err(Error::InvalidInput(format!(
                "feature patch {}x{} is smaller than {need}x{need}",
                patch.width, patch.height
            )));
        }
        Ok(())
    }

    fn centered(patch: &Image) -> Image {
        let n = (patch.width * patch.height) as f64;
        let mut mean = [0.0; 3];
        for px in patch.data.chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut out = patch.clone();
        for px in out.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] -= mean[c];
            }
        }
        out
    }

    pub fn embed(&self, patch: &Image) -> Result<FeatureEmbedding> {
        self.check(patch)?;
        let centered = Self::centered(patch);
        let (w, h) = patch.dims();
        let mut values = Vec::with_capacity(self.dim());
        for &g in &self.grids {
            let lw = self.level_weight(g);
            for r in 0..g {
                let (y0, y1) = bounds(h, g, r);
                for c in 0..g {
                    let (x0, x1) = bounds(w, g, c);
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    let mut sum = [0.0; 3];
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let px = centered.pixel(x, y);
                            for k in 0..3 {
                                sum[k] += px[k];
                            }
                        }
                    }
                    values.extend(sum.iter().map(|s| lw * s / count));
                }
            }
        }
        Ok(FeatureEmbedding::new(values))
    }

    /// Gradient with respect to the patch given a gradient on the embedding.
    pub fn backward(&self, width: usize, height: usize, grad: &[f64]) -> Result<Image> {
        if grad.len() != self.dim() {
            return Err(Error::LengthMismatch {
                left: self.dim(),
                right: grad.len(),
            });
        }
        let mut out = Image::new(width, height);
        let mut k = 0;
        for &g in &self.grids {
            let lw = self.level_weight(g);
            for r in 0..g {
                let (y0, y1) = bounds(height, g, r);
                for c in 0..g {
                    let (x0, x1) = bounds(width, g, c);
                    let scale = lw / ((y1 - y0) * (x1 - x0)) as f64;
                    let cell = [grad[k] * scale, grad[k + 1] * scale, grad[k + 2] * scale];
                    k += 3;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let i = (y * width + x) * 3;
                            for ch in 0..3 {
                                out.data[i + ch] += cell[ch];
                            }
                        }
                    }
                }
            }
        }
        // centering is a symmetric projection
        Ok(Self::centered(&out))
    }

    /// Lipschitz constant of [`ToyExtractor::embed`] with respect to the
    /// pixelwise L2 norm, for a patch of the given size.
    pub fn lipschitz_bound(&self, width: usize, height: usize) -> f64 {
        self.grids
            .iter()
            .map(|&g| {
                let min_cell = (0..g)
                    .map(|i| {
                        let (a, b) = bounds(height, g, i);
                        b - a
                    })
                    .min()
                    .unwrap()
                    * (0..g)
                        .map(|i| {
                            let (a, b) = bounds(width, g, i);
                            b - a
                        })
                        .min()
                        .unwrap();
                self.level_weight(g).powi(2) / min_cell as f64
            })
            .sum::<f64>()
            .sqrt()
    }
}
