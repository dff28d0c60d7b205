//! Scene builders and finite-difference helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use sparsesplat::rasterizer::{render, ParamGrads, RenderSettings};
use sparsesplat::scene::{logit, Camera, Gaussian3D, GaussianCloud, Mat3, Quat, Scene, Vec3, PARAMS_PER_GAUSSIAN};

/// Pinhole camera at `center` looking at the origin, image +y along world +y.
pub fn look_at(center: Vec3, width: usize, height: usize, focal: f64) -> Camera {
    let z = (-center).normalize();
    let x = Vec3::new(0.0, 1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Camera {
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rotation,
        translation: -(rotation * center),
        near: 0.01,
        far: 20.0,
    }
}

/// Camera at the origin looking down +z.
pub fn axis_camera(width: usize, height: usize, focal: f64) -> Camera {
    Camera {
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rotation: Mat3::identity(),
        translation: Vec3::zeros(),
        near: 0.01,
        far: 20.0,
    }
}

pub fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q;
        }
    }
}

/// Gaussians centered around `center` with the given box half-width and scale range.
pub fn random_cloud(rng: &mut impl Rng, n: usize, center: Vec3, half: f64, scales: (f64, f64)) -> GaussianCloud {
    let gaussians = (0..n)
        .map(|_| Gaussian3D {
            position: center + Vec3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            ),
            log_scale: Vec3::from_fn(|_, _| rng.random_range(scales.0.ln()..scales.1.ln())),
            rotation: random_quat(rng),
            opacity_logit: logit(rng.random_range(0.3..0.9)),
            color: Vec3::from_fn(|_, _| rng.random_range(0.05..0.95)),
        })
        .collect();
    GaussianCloud::new(gaussians)
}

/// Copy of `cloud` with every parameter nudged by up to `amount`.
pub fn perturbed(cloud: &GaussianCloud, rng: &mut impl Rng, amount: f64) -> GaussianCloud {
    let gaussians = cloud
        .gaussians
        .iter()
        .map(|g| {
            let mut p = g.to_params();
            for v in &mut p {
                *v += rng.random_range(-amount..amount);
            }
            Gaussian3D::from_params(&p)
        })
        .collect();
    GaussianCloud::new(gaussians)
}

/// Scene whose images are renders of `gt` from `cameras`.
pub fn scene_from_cloud(gt: &GaussianCloud, cameras: Vec<Camera>, train: Vec<usize>, test: Vec<usize>) -> Scene {
    let settings = RenderSettings::default();
    let images = cameras.iter().map(|c| render(gt, c, &settings).unwrap().color).collect();
    let n = cameras.len();
    Scene {
        names: (0..n).map(|i| format!("view_{i:03}.png")).collect(),
        cameras,
        images,
        depth_priors: vec![None; n],
        train,
        test,
    }
}

/// Relative error with a floor on the magnitude so that tiny gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub passed: usize,
    /// `(gaussian, parameter, analytic, numeric)` for every failure.
    pub failures: Vec<(usize, usize, f64, f64)>,
    pub worst: f64,
}

impl FdReport {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.passed += other.passed;
        self.failures.extend(other.failures);
        self.worst = self.worst.max(other.worst);
    }
}

/// Central differences of `f` over every cloud parameter against `analytic`.
pub fn fd_check(
    cloud: &GaussianCloud,
    analytic: &ParamGrads,
    h: f64,
    tol: f64,
    floor: f64,
    f: impl Fn(&GaussianCloud) -> f64,
) -> FdReport {
    let mut report = FdReport::default();
    for i in 0..cloud.len() {
        let a = analytic.params(i);
        for k in 0..PARAMS_PER_GAUSSIAN {
            let eval = |delta: f64| {
                let mut c = cloud.clone();
                let mut p = c.gaussians[i].to_params();
                p[k] += delta;
                c.gaussians[i] = Gaussian3D::from_params(&p);
                f(&c)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let e = rel_err(a[k], numeric, floor);
            report.checked += 1;
            report.worst = report.worst.max(e);
            if e < tol {
                report.passed += 1;
            } else {
                report.failures.push((i, k, a[k], numeric));
            }
        }
    }
    report
}

/// The full objective on an 8×8 two-view scene with one side view, every
/// term active, toy features and oracle depth.
pub mod oracle_scene {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sparsesplat::losses::{LossWeights, SsimParams};
    use sparsesplat::priors::PriorSource;
    use sparsesplat::rasterizer::RenderSettings;
    use sparsesplat::scene::{GaussianCloud, Scene, Vec3};
    use sparsesplat::side_views::SideViewSpec;
    use sparsesplat::trainer::{prepare_depth_priors, Objective, SidePlan, StepPlan};

    use super::*;

    pub const SIZE: usize = 8;

    pub struct Setup {
        pub scene: Scene,
        pub priors: PriorSource,
        pub depth: Vec<Option<sparsesplat::priors::DepthMap>>,
        pub weights: LossWeights,
        pub plan: StepPlan,
        pub cloud: GaussianCloud,
    }

    impl Setup {
        pub fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_cloud(&mut rng, 10, Vec3::zeros(), 0.5, (0.1, 0.3));
            let cameras = [-12.0f64, 12.0, 0.0]
                .iter()
                .map(|deg| {
                    let a = deg.to_radians();
                    look_at(Vec3::new(2.5 * a.sin(), -0.3, -2.5 * a.cos()), SIZE, SIZE, 16.0)
                })
                .collect();
            let scene = scene_from_cloud(&gt, cameras, vec![0, 1], vec![2]);
            let priors = PriorSource::oracle(gt.clone()).unwrap();
            let depth = prepare_depth_priors(&scene, &priors, &scene.train).unwrap();
            let weights = LossWeights {
                patch_size: 4,
                ssim: SsimParams { window: 5, sigma: 1.0 },
                ..Default::default()
            };
            let plan = StepPlan {
                train_view: 0,
                sides: vec![SidePlan {
                    spec: SideViewSpec {
                        parents: (0, 1),
                        t: 0.5,
                        jitter: 0.05,
                        seed: seed ^ 0x5eed,
                    },
                    crop: (0.0, 0.0),
                }],
            };
            let cloud = perturbed(&gt, &mut rng, 0.1);
            Self {
                scene,
                priors,
                depth,
                weights,
                plan,
                cloud,
            }
        }

        pub fn objective(&self) -> Objective<'_> {
            Objective {
                scene: &self.scene,
                priors: &self.priors,
                depth_priors: &self.depth,
                weights: self.weights.clone(),
                settings: RenderSettings::default(),
                semantic_patch: SIZE,
            }
        }

        /// Finite-difference comparison of the analytic gradient of the total.
        pub fn check(&self, h: f64, tol: f64, floor: f64) -> FdReport {
            let obj = self.objective();
            let eval = obj.evaluate(&self.cloud, &self.plan, 0).unwrap();
            let t = &eval.loss.terms;
            assert!(
                t.l1 > 0.0 && t.dssim > 0.0 && t.global_depth > 0.0 && t.semantic > 0.0 && t.local_depth > 0.0,
                "every term must be active: {t:?}"
            );
            fd_check(&self.cloud, &eval.grads, h, tol, floor, |c| {
                obj.evaluate(c, &self.plan, 0).unwrap().loss.total
            })
        }
    }
}
