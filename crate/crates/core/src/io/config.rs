//! Flat TOML run configuration covering loss weights, training schedule and paths.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::io::checkpoint::read_cloud;
use crate::io::colmap::LoadOptions;
use crate::losses::{DepthObjective, LossWeights, SsimParams};
use crate::priors::{PriorSource, ServiceClient};
use crate::side_views::SideViewSampling;
use crate::trainer::{AdamParams, DensifyConfig, LearningRates, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorBackend {
    #[default]
    Oracle,
    File,
    Service,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub prior_backend: PriorBackend,
    /// Directory of `.pfm` / `.femb` files; defaults to `<scene_dir>/depth`.
    pub prior_dir: Option<PathBuf>,
    pub prior_endpoint: Option<String>,
    pub prior_timeout_ms: u64,
    /// Ground-truth cloud for the oracle backend; defaults to `<scene_dir>/gt_cloud.sidg`.
    pub gt_cloud: Option<PathBuf>,

    pub near: f64,
    pub far: f64,
    pub train_views: usize,

    pub lambda_l1: f64,
    pub gamma_dssim: f64,
    pub beta_gdepth: f64,
    pub omega_0: f64,
    pub omega_sem: f64,
    pub omega_depth: f64,
    pub epsilon: f64,
    pub patch_size: usize,
    pub depth_objective: DepthObjective,
    pub ssim_window: usize,
    pub ssim_sigma: f64,

    pub iterations: usize,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub warmup: usize,
    pub side_views: usize,
    pub side_t_min: f64,
    pub side_t_max: f64,
    pub side_jitter: f64,
    pub semantic_patch: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub eval_interval: usize,
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&LossWeights::default(), &TrainConfig::default(), &LoadOptions::default())
    }
}

impl RunConfig {
    pub fn from_parts(w: &LossWeights, t: &TrainConfig, load: &LoadOptions) -> Self {
        Self {
            scene_dir: None,
            out_dir: None,
            prior_backend: PriorBackend::default(),
            prior_dir: None,
            prior_endpoint: None,
            prior_timeout_ms: 30_000,
            gt_cloud: None,
            near: load.near,
            far: load.far,
            train_views: load.train_views,
            lambda_l1: w.lambda_l1,
            gamma_dssim: w.gamma_dssim,
            beta_gdepth: w.beta_gdepth,
            omega_0: w.omega_0,
            omega_sem: w.omega_sem,
            omega_depth: w.omega_depth,
            epsilon: w.epsilon,
            patch_size: w.patch_size,
            depth_objective: w.depth_objective,
            ssim_window: w.ssim.window,
            ssim_sigma: w.ssim.sigma,
            iterations: t.iterations,
            lr_position_init: t.lr.position_init,
            lr_position_final: t.lr.position_final,
            lr_scale: t.lr.scale,
            lr_rotation: t.lr.rotation,
            lr_opacity: t.lr.opacity,
            lr_color: t.lr.color,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_epsilon: t.adam.epsilon,
            warmup: t.warmup,
            side_views: t.side_views,
            side_t_min: t.side_sampling.t_min,
            side_t_max: t.side_sampling.t_max,
            side_jitter: t.side_sampling.jitter,
            semantic_patch: t.semantic_patch,
            densify_from: t.densify_from,
            densify_until: t.densify_until,
            densify_interval: t.densify_interval,
            densify_grad_threshold: t.densify.grad_threshold,
            percent_dense: t.densify.percent_dense,
            prune_opacity: t.densify.prune_opacity,
            max_gaussians: t.densify.max_gaussians,
            seed: t.seed,
            deterministic: t.deterministic,
            eval_interval: t.eval_interval,
            checkpoint_interval: t.checkpoint_interval,
        }
    }

    /// Parses without validating paths; see [`RunConfig::validate`].
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_l1: self.lambda_l1,
            gamma_dssim: self.gamma_dssim,
            beta_gdepth: self.beta_gdepth,
            omega_0: self.omega_0,
            omega_sem: self.omega_sem,
            omega_depth: self.omega_depth,
            epsilon: self.epsilon,
            patch_size: self.patch_size,
            depth_objective: self.depth_objective,
            ssim: SsimParams {
                window: self.ssim_window,
                sigma: self.ssim_sigma,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            lr: LearningRates {
                position_init: self.lr_position_init,
                position_final: self.lr_position_final,
                scale: self.lr_scale,
                rotation: self.lr_rotation,
                opacity: self.lr_opacity,
                color: self.lr_color,
            },
            adam: AdamParams {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            warmup: self.warmup,
            side_views: self.side_views,
            side_sampling: SideViewSampling {
                t_min: self.side_t_min,
                t_max: self.side_t_max,
                jitter: self.side_jitter,
            },
            semantic_patch: self.semantic_patch,
            densify: DensifyConfig {
                grad_threshold: self.densify_grad_threshold,
                percent_dense: self.percent_dense,
                prune_opacity: self.prune_opacity,
                max_gaussians: self.max_gaussians,
            },
            densify_from: self.densify_from,
            densify_until: self.densify_until,
            densify_interval: self.densify_interval,
            seed: self.seed,
            deterministic: self.deterministic,
            eval_interval: self.eval_interval,
            checkpoint_interval: self.checkpoint_interval,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            near: self.near,
            far: self.far,
            train_views: self.train_views,
        }
    }

    pub fn prior_dir(&self) -> Option<PathBuf> {
        self.prior_dir
            .clone()
            .or_else(|| self.scene_dir.as_ref().map(|d| d.join("depth")))
    }

    pub fn gt_cloud(&self) -> Option<PathBuf> {
        self.gt_cloud
            .clone()
            .or_else(|| self.scene_dir.as_ref().map(|d| d.join("gt_cloud.sidg")))
    }

    /// Checks values and referenced paths; nothing is computed before this passes.
    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        self.train_config().validate()?;
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!(
                "clip planes must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        let must_exist = |what: &str, p: &Option<PathBuf>| -> Result<()> {
            match p {
                Some(p) if !p.exists() => Err(Error::Config(format!("{what} {} does not exist", p.display()))),
                _ => Ok(()),
            }
        };
        must_exist("scene_dir", &self.scene_dir)?;
        match self.prior_backend {
            PriorBackend::Oracle => must_exist("gt_cloud", &self.gt_cloud())?,
            PriorBackend::File => must_exist("prior_dir", &self.prior_dir())?,
            PriorBackend::Service => {
                if self.prior_endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(Error::Config("the service backend needs prior_endpoint".into()));
                }
            }
        }
        Ok(())
    }

    pub fn prior_source(&self) -> Result<PriorSource> {
        match self.prior_backend {
            PriorBackend::Oracle => {
                let path = self
                    .gt_cloud()
                    .ok_or_else(|| Error::Config("the oracle backend needs gt_cloud or scene_dir".into()))?;
                PriorSource::oracle(read_cloud(&path)?)
            }
            PriorBackend::File => Ok(PriorSource::File {
                dir: self
                    .prior_dir()
                    .ok_or_else(|| Error::Config("the file backend needs prior_dir or scene_dir".into()))?,
            }),
            PriorBackend::Service => {
                let endpoint = self
                    .prior_endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("the service backend needs prior_endpoint".into()))?;
                Ok(PriorSource::Service(ServiceClient::new(
                    endpoint,
                    Duration::from_millis(self.prior_timeout_ms),
                )))
            }
        }
    }
}
