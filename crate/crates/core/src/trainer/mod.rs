//! Per-scene optimization: Adam over every Gaussian parameter, regularizer
//! warmup, side-view sampling and periodic densification.

mod adam;
mod densify;
mod objective;

pub use adam::{Adam, AdamParams};
pub use densify::{densify_prune, DensifyConfig, DensifyReport, GradStats, SPLIT_SHRINK};
pub use objective::{prepare_depth_priors, Evaluation, Objective, SidePlan, StepPlan};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::mean_psnr;
use crate::losses::{LossBreakdown, LossWeights, TermValues};
use crate::priors::{DepthMap, PriorSource, MIN_PATCH};
use crate::rasterizer::RenderSettings;
use crate::scene::{validate_scene, GaussianCloud, Scene, Vec3, PARAMS_PER_GAUSSIAN};
use crate::side_views::{draw_side_spec, SideViewSampling};

#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    /// Position rate at the first step, before the spatial scale is applied.
    pub position_init: f64,
    /// Position rate reached at the last iteration.
    pub position_final: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position_init: 0.0,
            position_final: 0.0,
            scale: 0.0,
            rotation: 0.0,
            opacity: 0.0,
            color: 0.0,
        }
    }

    /// Log-linear decay of the position rate over `total` iterations.
    pub fn position_at(&self, iteration: usize, total: usize) -> f64 {
        if self.position_init == 0.0 || self.position_final == 0.0 {
            return self.position_init;
        }
        let t = (iteration as f64 / total.max(1) as f64).clamp(0.0, 1.0);
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    fn row(&self, position: f64) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        lr[0..3].fill(position);
        lr[3..6].fill(self.scale);
        lr[6..10].fill(self.rotation);
        lr[10] = self.opacity;
        lr[11..14].fill(self.color);
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub adam: AdamParams,
    /// Semantic and local-depth weights are held at zero, and no side views
    /// are rendered, before this iteration.
    pub warmup: usize,
    pub side_views: usize,
    pub side_sampling: SideViewSampling,
    /// Side length of the semantic crops, clamped to the image.
    pub semantic_patch: usize,
    pub densify: DensifyConfig,
    pub densify_from: usize,
    pub densify_until: usize,
    /// Zero disables densification.
    pub densify_interval: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Held-out PSNR snapshot period; zero keeps only the final snapshot.
    pub eval_interval: usize,
    /// Checkpoint period; zero disables periodic checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 12_000,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            warmup: 500,
            side_views: 1,
            side_sampling: SideViewSampling::default(),
            semantic_patch: 32,
            densify: DensifyConfig::default(),
            densify_from: 500,
            densify_until: 6_000,
            densify_interval: 100,
            seed: 0,
            deterministic: true,
            eval_interval: 1_000,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr_position_init", lr.position_init),
            ("lr_position_final", lr.position_final),
            ("lr_scale", lr.scale),
            ("lr_rotation", lr.rotation),
            ("lr_opacity", lr.opacity),
            ("lr_color", lr.color),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam.beta1), ("adam_beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam.epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam.epsilon));
        }
        let s = &self.side_sampling;
        if !(0.0 <= s.t_min && s.t_min <= s.t_max && s.t_max <= 1.0) {
            return bad(format!("side view t range [{}, {}] must lie within [0, 1]", s.t_min, s.t_max));
        }
        if !(s.jitter >= 0.0) {
            return bad(format!("side view jitter must be non-negative, got {}", s.jitter));
        }
        if self.semantic_patch < MIN_PATCH {
            return bad(format!("semantic_patch must be at least {MIN_PATCH}"));
        }
        let d = &self.densify;
        if !(d.grad_threshold >= 0.0 && d.percent_dense >= 0.0 && (0.0..1.0).contains(&d.prune_opacity)) {
            return bad("densification thresholds must be non-negative and prune_opacity below 1".into());
        }
        Ok(())
    }

    fn settings(&self) -> RenderSettings {
        RenderSettings {
            deterministic: self.deterministic,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub terms: TermValues,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub cloud: GaussianCloud,
    pub adam: Adam,
    /// Completed steps.
    pub iteration: usize,
    pub history: Vec<LossRecord>,
    pub stats: GradStats,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cloud: GaussianCloud, seed: u64) -> Self {
        let n = cloud.len();
        Self {
            cloud,
            adam: Adam::new(n),
            iteration: 0,
            history: Vec::new(),
            stats: GradStats::new(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.cloud.len();
        self.adam.len() == n && self.stats.count.len() == n && self.history.len() == self.iteration
    }
}

/// One line of the metrics trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub global_depth: f64,
    pub semantic: f64,
    pub local_depth: f64,
    pub gaussians: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densify: Option<DensifyReport>,
}

pub enum TrainEvent<'a> {
    Trace(&'a TraceRecord),
    Checkpoint { iteration: usize, cloud: &'a GaussianCloud },
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub trace: Vec<TraceRecord>,
    pub history: Vec<LossRecord>,
}

/// Binds a scene, its priors and the hyperparameters for a run.
pub struct Trainer<'a> {
    pub scene: &'a Scene,
    pub priors: &'a PriorSource,
    pub weights: LossWeights,
    pub config: TrainConfig,
    depth_priors: Vec<Option<DepthMap>>,
    extent: f64,
}

/// 1.1 × the largest distance of a training camera from their mean center.
pub fn scene_extent(scene: &Scene) -> f64 {
    let centers: Vec<Vec3> = scene.train.iter().map(|&v| scene.cameras[v].center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if radius > 0.0 {
        1.1 * radius
    } else {
        1.0
    }
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a Scene, priors: &'a PriorSource, weights: LossWeights, config: TrainConfig) -> Result<Self> {
        weights.validate()?;
        config.validate()?;
        if let Some(v) = validate_scene(scene).first() {
            return Err(Error::InvalidInput(format!("{} (view {:?}): {}", v.field, v.view, v.message)));
        }
        if scene.train.is_empty() {
            return Err(Error::InvalidInput("scene has no training views".into()));
        }
        let uses_side_views = weights.omega_sem > 0.0 || weights.omega_depth > 0.0;
        if weights.omega_sem > 0.0 {
            if config.side_views == 0 {
                return Err(Error::Config("omega_sem is non-zero but side_views is 0".into()));
            }
            if !priors.embeds_renders() {
                return Err(Error::Config(format!(
                    "omega_sem needs embeddings of side-view renders, which the {} backend cannot provide",
                    priors.name()
                )));
            }
        }
        if uses_side_views && config.side_views > 0 && scene.train.len() < 2 {
            return Err(Error::Config("side views need at least two training views".into()));
        }
        let needs_depth = weights.omega_0 * weights.beta_gdepth > 0.0 || weights.omega_depth > 0.0;
        let depth_priors = if needs_depth {
            prepare_depth_priors(scene, priors, &scene.train)?
        } else {
            vec![None; scene.view_count()]
        };
        Ok(Self {
            scene,
            priors,
            weights,
            config,
            depth_priors,
            extent: scene_extent(scene),
        })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn regularizers_active(&self, iteration: usize) -> bool {
        iteration >= self.config.warmup
    }

    /// Weights in effect at `iteration`.
    pub fn weights_at(&self, iteration: usize) -> LossWeights {
        let mut w = self.weights.clone();
        if !self.regularizers_active(iteration) {
            w.omega_sem = 0.0;
            w.omega_depth = 0.0;
        }
        w
    }

    pub fn objective(&self, iteration: usize) -> Objective<'_> {
        Objective {
            scene: self.scene,
            priors: self.priors,
            depth_priors: &self.depth_priors,
            weights: self.weights_at(iteration),
            settings: self.config.settings(),
            semantic_patch: self.config.semantic_patch,
        }
    }

    /// Draws the training view (round-robin) and the side views for the next step.
    pub fn plan(&self, state: &mut TrainState) -> StepPlan {
        let it = state.iteration;
        let train_view = self.scene.train[it % self.scene.train.len()];
        let wants_sides = self.weights.omega_sem > 0.0 || self.weights.omega_depth > 0.0;
        let mut sides = Vec::new();
        if wants_sides && self.regularizers_active(it) {
            for _ in 0..self.config.side_views {
                if let Some(spec) = draw_side_spec(
                    &self.scene.cameras,
                    &self.scene.train,
                    &self.config.side_sampling,
                    &mut state.rng,
                ) {
                    let crop = (state.rng.random::<f64>(), state.rng.random::<f64>());
                    sides.push(SidePlan { spec, crop });
                }
            }
        }
        StepPlan { train_view, sides }
    }

    /// One optimization step.
    pub fn step(&self, state: &mut TrainState) -> Result<LossBreakdown> {
        let it = state.iteration;
        let plan = self.plan(state);
        let eval = self.objective(it).evaluate(&state.cloud, &plan, it)?;

        let lr = self.config.lr.row(self.config.lr.position_at(it, self.config.iterations) * self.extent);
        state.adam.update(&mut state.cloud, &eval.grads, &lr, &self.config.adam);
        if self.config.lr.color > 0.0 {
            for g in &mut state.cloud.gaussians {
                g.color = g.color.map(|c| c.clamp(0.0, 1.0));
            }
        }
        if !state.cloud.gaussians.iter().all(|g| g.is_finite()) || !state.adam.is_finite() {
            return Err(Error::NonFinite {
                term: "parameters".into(),
                iteration: it,
            });
        }
        state.stats.record(&eval.train_visible, &eval.grads.position);
        state.iteration += 1;
        state.history.push(LossRecord {
            total: eval.loss.total,
            terms: eval.loss.terms,
        });
        Ok(eval.loss)
    }

    fn densify_due(&self, iteration: usize) -> bool {
        let c = &self.config;
        c.densify_interval > 0
            && iteration >= c.densify_from
            && iteration <= c.densify_until
            && iteration % c.densify_interval == 0
    }

    /// Densifies with the accumulated statistics and resets them.
    pub fn densify(&self, state: &mut TrainState) -> Result<DensifyReport> {
        let report = densify_prune(
            &mut state.cloud,
            &mut state.adam,
            &state.stats,
            &self.config.densify,
            self.extent,
            &mut state.rng,
        )?;
        state.stats = GradStats::new(state.cloud.len());
        Ok(report)
    }

    /// Mean PSNR over `views` for the current cloud.
    pub fn psnr(&self, cloud: &GaussianCloud, views: &[usize]) -> Result<f64> {
        mean_psnr(cloud, self.scene, views, &self.config.settings())
    }

    /// Runs every iteration, reporting trace records and checkpoints to `on_event`.
    pub fn run(
        &self,
        initial: GaussianCloud,
        mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<TrainResult> {
        if initial.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut state = TrainState::new(initial, self.config.seed);
        let mut trace = Vec::with_capacity(self.config.iterations);
        let total = self.config.iterations;
        while state.iteration < total {
            let loss = self.step(&mut state)?;
            let it = state.iteration;
            let densify = if self.densify_due(it) && it < total {
                Some(self.densify(&mut state)?)
            } else {
                None
            };
            let snapshot = it == total || (self.config.eval_interval > 0 && it % self.config.eval_interval == 0);
            let (train_psnr, test_psnr) = if snapshot {
                let test = if self.scene.test.is_empty() {
                    None
                } else {
                    Some(self.psnr(&state.cloud, &self.scene.test)?)
                };
                (Some(self.psnr(&state.cloud, &self.scene.train)?), test)
            } else {
                (None, None)
            };
            let t = &loss.terms;
            let record = TraceRecord {
                iteration: it,
                total: loss.total,
                l1: t.l1,
                dssim: t.dssim,
                global_depth: t.global_depth,
                semantic: t.semantic,
                local_depth: t.local_depth,
                gaussians: state.cloud.len(),
                train_psnr,
                test_psnr,
                densify: densify.filter(|r| !r.is_empty()),
            };
            if let Some(p) = test_psnr {
                log::info!("iteration {it}: loss {:.5}, held-out PSNR {p:.2} dB", loss.total);
            }
            on_event(TrainEvent::Trace(&record))?;
            trace.push(record);
            if self.config.checkpoint_interval > 0 && it % self.config.checkpoint_interval == 0 {
                on_event(TrainEvent::Checkpoint {
                    iteration: it,
                    cloud: &state.cloud,
                })?;
            }
        }
        Ok(TrainResult {
            cloud: state.cloud,
            trace,
            history: state.history,
        })
    }
}

/// Trains from `initial` without observers.
pub fn train(
    scene: &Scene,
    priors: &PriorSource,
    weights: LossWeights,
    config: TrainConfig,
    initial: GaussianCloud,
) -> Result<TrainResult> {
    Trainer::new(scene, priors, weights, config)?.run(initial, |_| Ok(()))
}
