//! The full training objective on one training view plus its side views,
//! with gradients chained back to the Gaussian parameters.

use std::sync::Once;

use crate::buffer::{Image, Map, Rect};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossWeights, SideTerm};
use crate::priors::{CropKey, DepthMap, FeatureEmbedding, PriorSource, PriorView, MIN_PATCH};
use crate::rasterizer::{render, render_backward, ParamGrads, RenderOutput, RenderSettings};
use crate::scene::{Camera, GaussianCloud, Scene};
use crate::side_views::{nearest_view, sample_side_pose, SideViewSpec};

/// One side view: its pose recipe and the normalized top-left corner of the
/// semantic crop.
#[derive(Clone, Debug, PartialEq)]
pub struct SidePlan {
    pub spec: SideViewSpec,
    pub crop: (f64, f64),
}

/// Everything random about one step, drawn up front so the objective is a
/// deterministic function of the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub train_view: usize,
    pub sides: Vec<SidePlan>,
}

pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: ParamGrads,
    /// Gaussians that survived culling in the training render.
    pub train_visible: Vec<usize>,
}

pub struct Objective<'a> {
    pub scene: &'a Scene,
    pub priors: &'a PriorSource,
    /// Depth prior per view index; only training views are consulted.
    pub depth_priors: &'a [Option<DepthMap>],
    pub weights: LossWeights,
    pub settings: RenderSettings,
    pub semantic_patch: usize,
}

static NO_VJP_WARNING: Once = Once::new();

/// Fetches depth priors for `views`, preferring maps already attached to the scene.
pub fn prepare_depth_priors(scene: &Scene, priors: &PriorSource, views: &[usize]) -> Result<Vec<Option<DepthMap>>> {
    let mut out = vec![None; scene.view_count()];
    for &v in views {
        out[v] = Some(match scene.depth_priors.get(v).cloned().flatten() {
            Some(d) => d,
            None => priors.get_depth(
                &PriorView {
                    camera: &scene.cameras[v],
                    stem: Some(scene.stem(v)),
                },
                Some(&scene.images[v]),
            )?,
        });
    }
    Ok(out)
}

struct SideRender {
    camera: Camera,
    out: RenderOutput,
    crop: Option<Rect>,
    embeddings: Option<(FeatureEmbedding, FeatureEmbedding)>,
    prior: Option<DepthMap>,
}

impl Objective<'_> {
    fn needs_depth(&self) -> bool {
        self.weights.beta_gdepth * self.weights.omega_0 > 0.0 || self.weights.omega_depth > 0.0
    }

    fn side_render(&self, cloud: &GaussianCloud, side: &SidePlan) -> Result<SideRender> {
        let (a, b) = side.spec.parents;
        let camera = sample_side_pose(&self.scene.cameras[a], &self.scene.cameras[b], &side.spec)?;
        let out = render(cloud, &camera, &self.settings)?;
        let mut crop = None;
        let mut embeddings = None;
        if self.weights.omega_sem > 0.0 {
            let pair = nearest_view(&self.scene.cameras, &self.scene.train, &camera.center(), None)
                .ok_or_else(|| Error::InvalidInput("no training view to pair a side view with".into()))?;
            let gt = &self.scene.images[pair];
            let size = self
                .semantic_patch
                .min(camera.width)
                .min(camera.height)
                .min(gt.width)
                .min(gt.height);
            if size < MIN_PATCH {
                return Err(Error::InvalidInput(format!(
                    "semantic crop of {size} pixels is below the {MIN_PATCH}-pixel minimum"
                )));
            }
            let (u, v) = side.crop;
            let side_rect = Rect::at_normalized(camera.width, camera.height, size, u, v);
            let train_rect = Rect::at_normalized(gt.width, gt.height, size, u, v);
            let key = CropKey {
                stem: self.scene.stem(pair).to_string(),
                crop_id: format!("{}_{}_{}", train_rect.x, train_rect.y, size),
            };
            let side_emb = self.priors.get_features(&out.color.crop(side_rect), None)?;
            let train_emb = self.priors.get_features(&gt.crop(train_rect), Some(&key))?;
            crop = Some(side_rect);
            embeddings = Some((side_emb, train_emb));
        }
        let prior = if self.weights.omega_depth > 0.0 && !matches!(self.priors, PriorSource::File { .. }) {
            Some(self.priors.get_depth(
                &PriorView {
                    camera: &camera,
                    stem: None,
                },
                Some(&out.color),
            )?)
        } else {
            None
        };
        Ok(SideRender {
            camera,
            out,
            crop,
            embeddings,
            prior,
        })
    }

    /// Loss and parameter gradients for `plan`; `iteration` only labels diagnostics.
    pub fn evaluate(&self, cloud: &GaussianCloud, plan: &StepPlan, iteration: usize) -> Result<Evaluation> {
        let view = plan.train_view;
        let train_out = render(cloud, &self.scene.cameras[view], &self.settings)?;
        let prior = if self.needs_depth() {
            let d = self.depth_priors.get(view).and_then(|d| d.as_ref()).ok_or_else(|| {
                Error::MissingPrior(format!("no depth prior for training view {view}"))
            })?;
            Some(d.clone())
        } else {
            None
        };

        let sides = plan
            .sides
            .iter()
            .map(|s| self.side_render(cloud, s))
            .collect::<Result<Vec<_>>>()?;
        let side_terms: Vec<SideTerm<'_>> = sides
            .iter()
            .map(|s| SideTerm {
                embeddings: s.embeddings.as_ref().map(|(a, b)| (a, b)),
                rendered_depth: &s.out.depth,
                prior_depth: s.prior.as_ref(),
            })
            .collect();

        let loss = total_loss(&train_out, &self.scene.images[view], prior.as_ref(), &side_terms, &self.weights)?;
        for (term, value) in loss.terms.named() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: term.into(),
                    iteration,
                });
            }
        }

        let mut grads = render_backward(&train_out, &loss.train_color_grad, &loss.train_depth_grad)?;
        for (side, g) in sides.iter().zip(&loss.side_grads) {
            let (w, h) = (side.camera.width, side.camera.height);
            let mut color_grad = None;
            if let (Some(eg), Some(rect)) = (&g.embedding, side.crop) {
                let patch = side.out.color.crop(rect);
                match self.priors.features_vjp(&patch, eg) {
                    Some(patch_grad) => {
                        let mut full = Image::new(w, h);
                        full.accumulate(rect, &patch_grad?);
                        color_grad = Some(full);
                    }
                    None => NO_VJP_WARNING.call_once(|| {
                        log::warn!(
                            "the {} prior backend cannot differentiate its features; the semantic term is reported but not optimized",
                            self.priors.name()
                        )
                    }),
                }
            }
            if color_grad.is_none() && g.depth.is_none() {
                continue;
            }
            let color_grad = color_grad.unwrap_or_else(|| Image::new(w, h));
            let depth_grad = g.depth.clone().unwrap_or_else(|| Map::new(w, h));
            grads.add_assign(&render_backward(&side.out, &color_grad, &depth_grad)?);
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                term: "gradient".into(),
                iteration,
            });
        }
        Ok(Evaluation {
            loss,
            grads,
            train_visible: train_out.ctx.visible_indices(),
        })
    }
}
