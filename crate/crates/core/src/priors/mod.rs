//! Depth priors and feature embeddings behind one interface.
//!
//! Three backends are available: files written ahead of time, an oracle that
//! renders a known ground-truth cloud (with the pooling extractor for
//! features), and a live service speaking the protocol in [`service`].

pub mod service;
mod toy;

use std::path::PathBuf;

pub use service::ServiceClient;
pub use toy::{ToyExtractor, MIN_PATCH};

use crate::buffer::{Image, Map};
use crate::error::{Error, Result};
use crate::io::{femb, pfm};
use crate::rasterizer::{render, RenderSettings, MIN_DEPTH_WEIGHT};
use crate::scene::{Camera, GaussianCloud};

/// Relative depth with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub map: Map,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Marks every finite value valid.
    pub fn new(map: Map) -> Self {
        let valid = map.data.iter().map(|v| v.is_finite()).collect();
        Self { map, valid }
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.valid[pixel]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEmbedding {
    pub values: Vec<f64>,
}

impl FeatureEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Identifies the view a prior is requested for.
#[derive(Clone, Copy, Debug)]
pub struct PriorView<'a> {
    pub camera: &'a Camera,
    /// Image stem for stored views; `None` for synthesized side views.
    pub stem: Option<&'a str>,
}

/// Key of a precomputed feature file: `<stem>.<crop_id>.femb`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropKey {
    pub stem: String,
    pub crop_id: String,
}

#[derive(Clone, Debug)]
pub enum PriorSource {
    /// `<dir>/<stem>.pfm` depth maps and `<dir>/<stem>.<crop>.femb` embeddings.
    File { dir: PathBuf },
    /// Exact depth of a ground-truth cloud plus the pooling extractor.
    Oracle {
        cloud: GaussianCloud,
        settings: RenderSettings,
        extractor: ToyExtractor,
    },
    Service(ServiceClient),
}

impl PriorSource {
    pub fn oracle(cloud: GaussianCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Config("oracle prior backend needs a non-empty ground-truth cloud".into()));
        }
        Ok(PriorSource::Oracle {
            cloud,
            settings: RenderSettings::default(),
            extractor: ToyExtractor::default(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSource::File { .. } => "file",
            PriorSource::Oracle { .. } => "oracle",
            PriorSource::Service(_) => "service",
        }
    }

    pub fn get_depth(&self, view: &PriorView<'_>, rendered_image: Option<&Image>) -> Result<DepthMap> {
        let (w, h) = (view.camera.width, view.camera.height);
        let depth = match self {
            PriorSource::File { dir } => {
                let stem = view
                    .stem
                    .ok_or_else(|| Error::MissingPrior("file backend has no depth for synthesized views".into()))?;
                let path = dir.join(format!("{stem}.pfm"));
                if !path.exists() {
                    return Err(Error::MissingPrior(format!("{} not found", path.display())));
                }
                pfm::read_pfm(&path)?
            }
            PriorSource::Oracle { cloud, settings, .. } => {
                // pixels the ground truth never covers carry no depth
                let out = render(cloud, view.camera, settings)?;
                let valid = out.alpha_acc.data.iter().map(|&a| a > MIN_DEPTH_WEIGHT).collect();
                DepthMap { map: out.depth, valid }
            }
            PriorSource::Service(client) => {
                let image = rendered_image
                    .ok_or_else(|| Error::MissingPrior("service backend needs the rendered image".into()))?;
                DepthMap::new(client.depth(image)?)
            }
        };
        if depth.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: depth.dims(),
            });
        }
        Ok(depth)
    }

    pub fn get_features(&self, patch: &Image, key: Option<&CropKey>) -> Result<FeatureEmbedding> {
        if patch.width < MIN_PATCH || patch.height < MIN_PATCH {
            return Err(Error::InvalidInput(format!(
                "feature patch {}x{} is smaller than {MIN_PATCH}x{MIN_PATCH}",
                patch.width, patch.height
            )));
        }
        let values = match self {
            PriorSource::File { dir } => {
                let key = key.ok_or_else(|| {
                    Error::MissingPrior("file backend needs a crop key to locate an embedding".into())
                })?;
                let path = dir.join(format!("{}.{}.femb", key.stem, key.crop_id));
                if !path.exists() {
                    return Err(Error::MissingPrior(format!("{} not found", path.display())));
                }
                femb::read_femb(&path)?.values
            }
            PriorSource::Oracle { extractor, .. } => extractor.embed(patch)?.values,
            PriorSource::Service(client) => client.features(patch)?,
        };
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("feature embedding contains non-finite values".into()));
        }
        Ok(FeatureEmbedding::new(values))
    }

    /// Whether embeddings of freshly rendered (unkeyed) patches are available.
    pub fn embeds_renders(&self) -> bool {
        !matches!(self, PriorSource::File { .. })
    }

    /// Pulls an embedding gradient back to the patch, when the backend's
    /// extractor is differentiable in-process.
    pub fn features_vjp(&self, patch: &Image, grad: &[f64]) -> Option<Result<Image>> {
        match self {
            PriorSource::Oracle { extractor, .. } => Some(extractor.backward(patch.width, patch.height, grad)),
            _ => None,
        }
    }
}
