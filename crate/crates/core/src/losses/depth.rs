//! Correlation-based depth losses.
//!
//! Depth priors from monocular estimators carry an unknown affine scale, so
//! both depth terms compare normalized maps through Pearson correlation and
//! are unchanged by positive affine transforms of the prior.

use serde::{Deserialize, Serialize};

use crate::buffer::Map;
use crate::error::{Error, Result};
use crate::priors::DepthMap;

use super::Scored;

/// Tiles whose population standard deviation falls below this are skipped.
pub const DEGENERATE_STD: f64 = 1e-6;

/// How a per-tile correlation becomes a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthObjective {
    /// `1 − Corr`: minimized when the maps agree.
    #[default]
    OneMinusCorr,
    /// `|Corr|`, the absolute-value form; minimized at zero correlation.
    AbsCorr,
}

impl DepthObjective {
    fn loss(self, corr: f64) -> (f64, f64) {
        match self {
            DepthObjective::OneMinusCorr => (1.0 - corr, -1.0),
            DepthObjective::AbsCorr => (corr.abs(), if corr >= 0.0 { 1.0 } else { -1.0 }),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(d − μ) / (σ + ε)` with population statistics of the patch.
pub fn local_normalize(patch: &[f64], epsilon: f64) -> Vec<f64> {
    if patch.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_std(patch);
    patch.iter().map(|d| (d - mean) / (std + epsilon)).collect()
}

/// Vector-Jacobian product of [`local_normalize`].
fn local_normalize_backward(patch: &[f64], grad_out: &[f64], epsilon: f64) -> Vec<f64> {
    let n = patch.len() as f64;
    let (mean, std) = mean_std(patch);
    let s = std + epsilon;
    let g_mean = grad_out.iter().sum::<f64>() / n;
    let g_dot: f64 = grad_out.iter().zip(patch).map(|(g, d)| g * (d - mean)).sum();
    patch
        .iter()
        .zip(grad_out)
        .map(|(d, g)| {
            let centered = d - mean;
            let via_std = if std > 0.0 { g_dot / (s * s) * centered / (n * std) } else { 0.0 };
            (g - g_mean) / s - via_std
        })
        .collect()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "correlation needs at least 2 values, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Population Pearson correlation; each variance is floored at `epsilon²`.
pub fn pearson(a: &[f64], b: &[f64], epsilon: f64) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(pearson_with_grad(a, b, epsilon).0)
}

/// Correlation and its gradient with respect to `b`.
pub(crate) fn pearson_with_grad(a: &[f64], b: &[f64], epsilon: f64) -> (f64, Vec<f64>) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    cov /= n;
    va /= n;
    vb /= n;
    let floor = epsilon * epsilon;
    let b_floored = vb < floor;
    let (va, vb) = (va.max(floor), vb.max(floor));
    let denom = (va * vb).sqrt();
    let corr = cov / denom;
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let (dx, dy) = (x - ma, y - mb);
            let mut g = dx / (n * denom);
            if !b_floored {
                g -= corr * dy / (n * vb);
            }
            g
        })
        .collect();
    (corr, grad)
}

#[derive(Clone, Debug)]
pub struct DepthLoss {
    pub value: f64,
    /// Gradient with respect to the rendered depth map.
    pub grad: Map,
    pub tiles_used: usize,
    pub tiles_skipped: usize,
}

struct TileTerm {
    loss: f64,
    /// (pixel index, gradient) pairs, unscaled by the tile count.
    grad: Vec<(usize, f64)>,
}

fn tile_term(
    rendered: &Map,
    prior: &DepthMap,
    pixels: &[usize],
    epsilon: f64,
    objective: DepthObjective,
) -> Option<TileTerm> {
    if pixels.len() < 2 {
        return None;
    }
    let r: Vec<f64> = pixels.iter().map(|&p| rendered.data[p]).collect();
    let d: Vec<f64> = pixels.iter().map(|&p| prior.map.data[p]).collect();
    if mean_std(&r).1 < DEGENERATE_STD || mean_std(&d).1 < DEGENERATE_STD {
        return None;
    }
    let prior_n = local_normalize(&d, epsilon);
    let rendered_n = local_normalize(&r, epsilon);
    let (corr, g_corr) = pearson_with_grad(&prior_n, &rendered_n, epsilon);
    let (loss, dloss) = objective.loss(corr);
    let g_n: Vec<f64> = g_corr.iter().map(|g| g * dloss).collect();
    let g_r = local_normalize_backward(&r, &g_n, epsilon);
    Some(TileTerm {
        loss,
        grad: pixels.iter().copied().zip(g_r).collect(),
    })
}

fn valid_pixels(rendered: &Map, prior: &DepthMap, x0: usize, y0: usize, w: usize, h: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let p = y * rendered.width + x;
            if prior.is_valid(p) && rendered.data[p].is_finite() {
                out.push(p);
            }
        }
    }
    out
}

fn check_maps(rendered: &Map, prior: &DepthMap) -> Result<()> {
    if rendered.dims() != prior.map.dims() {
        return Err(Error::DimensionMismatch {
            expected: prior.map.dims(),
            actual: rendered.dims(),
        });
    }
    Ok(())
}

/// Mean per-tile correlation loss between locally normalized depth maps.
///
/// Tiles are `patch_size` squares; edge tiles keep their remainder and are
/// dropped when narrower than 2 pixels. Tiles that are constant in either map
/// are skipped and counted in `tiles_skipped`.
pub fn local_depth_loss(
    rendered: &Map,
    prior: &DepthMap,
    patch_size: usize,
    epsilon: f64,
    objective: DepthObjective,
) -> Result<DepthLoss> {
    check_maps(rendered, prior)?;
    if patch_size < 2 {
        return Err(Error::Config(format!("patch size must be at least 2, got {patch_size}")));
    }
    let (w, h) = rendered.dims();
    let mut terms = Vec::new();
    let mut skipped = 0;
    for y0 in (0..h).step_by(patch_size) {
        let th = patch_size.min(h - y0);
        for x0 in (0..w).step_by(patch_size) {
            let tw = patch_size.min(w - x0);
            if th < 2 || tw < 2 {
                continue;
            }
            let pixels = valid_pixels(rendered, prior, x0, y0, tw, th);
            match tile_term(rendered, prior, &pixels, epsilon, objective) {
                Some(t) => terms.push(t),
                None => skipped += 1,
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::NoSignal(format!(
            "all {skipped} depth tiles are constant or empty"
        )));
    }
    let n = terms.len() as f64;
    let mut grad = Map::new(w, h);
    let mut value = 0.0;
    for t in &terms {
        value += t.loss;
        for &(p, g) in &t.grad {
            grad.data[p] += g / n;
        }
    }
    Ok(DepthLoss {
        value: value / n,
        grad,
        tiles_used: terms.len(),
        tiles_skipped: skipped,
    })
}

/// `1 − Corr` between the full (globally normalized) maps.
pub fn global_depth_loss(rendered: &Map, prior: &DepthMap, epsilon: f64) -> Result<Scored<Map>> {
    check_maps(rendered, prior)?;
    let (w, h) = rendered.dims();
    let pixels = valid_pixels(rendered, prior, 0, 0, w, h);
    let term = tile_term(rendered, prior, &pixels, epsilon, DepthObjective::OneMinusCorr)
        .ok_or_else(|| Error::NoSignal("depth map is constant".into()))?;
    let mut grad = Map::new(w, h);
    for (p, g) in term.grad {
        grad.data[p] = g;
    }
    Ok(Scored {
        value: term.loss,
        grad,
    })
}
