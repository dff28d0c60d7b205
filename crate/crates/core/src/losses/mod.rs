//! Photometric, depth and semantic loss terms and their weighted total.
//!
//! ```text
//! L0    = λ·L1 + γ·D-SSIM + β·(1 − Corr_global)
//! total = ω0·L0 + ω_sem·mean‖f(P′) − f(P)‖² + ω_depth·mean(local depth)
//! ```
//! Every term returns its gradient with respect to the rendered quantity it
//! reads (color, depth or side-view embedding); the trainer chains those into
//! the rasterizer.

mod depth;
mod ssim;

pub use depth::{
    global_depth_loss, local_depth_loss, local_normalize, pearson, DepthLoss, DepthObjective, DEGENERATE_STD,
};
pub use ssim::{d_ssim, ssim, SsimParams, C1, C2};

use crate::buffer::{Image, Map};
use crate::error::{Error, Result};
use crate::priors::{DepthMap, FeatureEmbedding};
use crate::rasterizer::RenderOutput;

/// A scalar loss with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored<T> {
    pub value: f64,
    pub grad: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub gamma_dssim: f64,
    pub beta_gdepth: f64,
    pub omega_0: f64,
    pub omega_sem: f64,
    pub omega_depth: f64,
    pub epsilon: f64,
    pub patch_size: usize,
    pub depth_objective: DepthObjective,
    pub ssim: SsimParams,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 0.8,
            gamma_dssim: 0.2,
            beta_gdepth: 0.05,
            omega_0: 1.0,
            omega_sem: 0.6,
            omega_depth: 0.5,
            epsilon: 1e-8,
            patch_size: 126,
            depth_objective: DepthObjective::OneMinusCorr,
            ssim: SsimParams::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda_l1", self.lambda_l1),
            ("gamma_dssim", self.gamma_dssim),
            ("beta_gdepth", self.beta_gdepth),
            ("omega_0", self.omega_0),
            ("omega_sem", self.omega_sem),
            ("omega_depth", self.omega_depth),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.patch_size < 2 {
            return Err(Error::Config(format!("patch_size must be at least 2, got {}", self.patch_size)));
        }
        if self.ssim.window == 0 || !(self.ssim.sigma > 0.0) {
            return Err(Error::Config("ssim window must be non-empty with positive sigma".into()));
        }
        Ok(())
    }
}

/// Mean absolute difference over all channels; subgradient 0 at ties.
pub fn l1_color(rendered: &Image, reference: &Image) -> Result<Scored<Image>> {
    rendered.check_same_dims(reference)?;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut sum = 0.0;
    for (i, (r, t)) in rendered.data.iter().zip(&reference.data).enumerate() {
        let d = r - t;
        sum += d.abs();
        grad.data[i] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(Scored { value: sum / n, grad })
}

/// Squared Euclidean distance between embeddings; gradient with respect to
/// the side-view embedding.
pub fn semantic_loss(side: &FeatureEmbedding, train: &FeatureEmbedding) -> Result<Scored<Vec<f64>>> {
    if side.dim() != train.dim() {
        return Err(Error::LengthMismatch {
            left: side.dim(),
            right: train.dim(),
        });
    }
    let diff: Vec<f64> = side.values.iter().zip(&train.values).map(|(a, b)| a - b).collect();
    Ok(Scored {
        value: diff.iter().map(|d| d * d).sum(),
        grad: diff.iter().map(|d| 2.0 * d).collect(),
    })
}

/// Unweighted term values entering the total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermValues {
    pub l1: f64,
    pub dssim: f64,
    pub global_depth: f64,
    pub semantic: f64,
    pub local_depth: f64,
}

impl TermValues {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("l1", self.l1),
            ("dssim", self.dssim),
            ("global_depth", self.global_depth),
            ("semantic", self.semantic),
            ("local_depth", self.local_depth),
        ]
    }
}

/// `ω0·(λ·l1 + γ·dssim + β·global_depth) + ω_sem·semantic + ω_depth·local_depth`.
pub fn combine(weights: &LossWeights, t: &TermValues) -> f64 {
    weights.omega_0 * (weights.lambda_l1 * t.l1 + weights.gamma_dssim * t.dssim + weights.beta_gdepth * t.global_depth)
        + weights.omega_sem * t.semantic
        + weights.omega_depth * t.local_depth
}

/// Regularizer inputs for one side view.
#[derive(Clone, Debug)]
pub struct SideTerm<'a> {
    /// `(side-view embedding, paired training-view embedding)`.
    pub embeddings: Option<(&'a FeatureEmbedding, &'a FeatureEmbedding)>,
    pub rendered_depth: &'a Map,
    pub prior_depth: Option<&'a DepthMap>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideGrad {
    /// Gradient of the total with respect to the side-view embedding.
    pub embedding: Option<Vec<f64>>,
    /// Gradient of the total with respect to the side-view rendered depth.
    pub depth: Option<Map>,
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: TermValues,
    /// Depth views dropped because every tile was constant.
    pub depth_views_skipped: usize,
    pub train_color_grad: Image,
    pub train_depth_grad: Map,
    pub side_grads: Vec<SideGrad>,
}

/// Assembles the full objective on one training render plus its side views.
pub fn total_loss(
    render_train: &RenderOutput,
    gt: &Image,
    prior_depth_train: Option<&DepthMap>,
    side_terms: &[SideTerm<'_>],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let color = &render_train.color;
    let depth = &render_train.depth;
    let (w, h) = color.dims();
    let mut terms = TermValues::default();
    let mut skipped = 0;

    let l1 = l1_color(color, gt)?;
    let ds = d_ssim(color, gt, &weights.ssim)?;
    terms.l1 = l1.value;
    terms.dssim = ds.value;
    let mut train_color_grad = Image::new(w, h);
    let photometric = weights.omega_0;
    for i in 0..train_color_grad.data.len() {
        train_color_grad.data[i] =
            photometric * (weights.lambda_l1 * l1.grad.data[i] + weights.gamma_dssim * ds.grad.data[i]);
    }

    let mut train_depth_grad = Map::new(w, h);
    let global_weight = weights.omega_0 * weights.beta_gdepth;
    match prior_depth_train {
        Some(prior) => match global_depth_loss(depth, prior, weights.epsilon) {
            Ok(g) => {
                terms.global_depth = g.value;
                for (dst, src) in train_depth_grad.data.iter_mut().zip(&g.grad.data) {
                    *dst += global_weight * src;
                }
            }
            Err(Error::NoSignal(_)) => skipped += 1,
            Err(e) => return Err(e),
        },
        None if global_weight > 0.0 => {
            return Err(Error::Config(
                "global depth weight is non-zero but the training view has no depth prior".into(),
            ))
        }
        None => {}
    }

    let mut side_grads = vec![SideGrad::default(); side_terms.len()];

    // semantic
    let with_embeddings: Vec<usize> = (0..side_terms.len())
        .filter(|&i| side_terms[i].embeddings.is_some())
        .collect();
    if weights.omega_sem > 0.0 && (side_terms.is_empty() || with_embeddings.len() != side_terms.len()) {
        return Err(Error::Config(
            "semantic weight is non-zero but some side views lack embeddings".into(),
        ));
    }
    if !with_embeddings.is_empty() {
        let n = with_embeddings.len() as f64;
        let mut sum = 0.0;
        for &i in &with_embeddings {
            let (side, train) = side_terms[i].embeddings.unwrap();
            let s = semantic_loss(side, train)?;
            sum += s.value;
            side_grads[i].embedding = Some(s.grad.iter().map(|g| weights.omega_sem * g / n).collect());
        }
        terms.semantic = sum / n;
    }

    // local depth over the training view and every side view with a prior
    struct DepthTerm {
        target: Option<usize>,
        loss: DepthLoss,
    }
    let mut depth_terms = Vec::new();
    let mut candidates = 0;
    let mut views: Vec<(Option<usize>, &Map, &DepthMap)> = Vec::new();
    if let Some(prior) = prior_depth_train {
        views.push((None, depth, prior));
    }
    for (i, s) in side_terms.iter().enumerate() {
        if let Some(prior) = s.prior_depth {
            views.push((Some(i), s.rendered_depth, prior));
        }
    }
    for (target, rendered, prior) in views {
        candidates += 1;
        match local_depth_loss(rendered, prior, weights.patch_size, weights.epsilon, weights.depth_objective) {
            Ok(loss) => depth_terms.push(DepthTerm { target, loss }),
            Err(Error::NoSignal(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if weights.omega_depth > 0.0 && candidates == 0 {
        return Err(Error::Config(
            "local depth weight is non-zero but no view carries a depth prior".into(),
        ));
    }
    if !depth_terms.is_empty() {
        let n = depth_terms.len() as f64;
        let scale = weights.omega_depth / n;
        terms.local_depth = depth_terms.iter().map(|t| t.loss.value).sum::<f64>() / n;
        for t in depth_terms {
            let grad = t.loss.grad;
            match t.target {
                None => {
                    for (dst, src) in train_depth_grad.data.iter_mut().zip(&grad.data) {
                        *dst += scale * src;
                    }
                }
                Some(i) => {
                    let mut g = grad;
                    g.data.iter_mut().for_each(|v| *v *= scale);
                    side_grads[i].depth = Some(g);
                }
            }
        }
    }

    Ok(LossBreakdown {
        total: combine(weights, &terms),
        terms,
        depth_views_skipped: skipped,
        train_color_grad,
        train_depth_grad,
        side_grads,
    })
}
