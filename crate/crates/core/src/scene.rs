//! Optimizable Gaussian scene, cameras and parameter activations.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::buffer::Image;
use crate::error::{Error, Result};
use crate::priors::DepthMap;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// Quaternion stored as `(w, x, y, z)`; not necessarily unit length.
pub type Quat = Vector4<f64>;

/// Lower bound on activated scales, in world units.
pub const MIN_SCALE: f64 = 1e-7;

const MIN_QUAT_NORM: f64 = 1e-12;

/// Number of scalar parameters per Gaussian (3 + 3 + 4 + 1 + 3).
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vec3,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vec3,
    /// `(w, x, y, z)`, normalized on use.
    pub rotation: Quat,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    /// RGB in `[0, 1]`; the optimizer projects updates back into range.
    pub color: Vec3,
}

impl Gaussian3D {
    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(|s| s.exp().max(MIN_SCALE))
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Result<Mat3> {
        covariance_from_params(&self.log_scale, &self.rotation)
    }

    /// Flattens the parameters in declaration order.
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..6].copy_from_slice(self.log_scale.as_slice());
        out[6..10].copy_from_slice(self.rotation.as_slice());
        out[10] = self.opacity_logit;
        out[11..14].copy_from_slice(self.color.as_slice());
        out
    }

    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            position: Vec3::new(p[0], p[1], p[2]),
            log_scale: Vec3::new(p[3], p[4], p[5]),
            rotation: Quat::new(p[6], p[7], p[8], p[9]),
            opacity_logit: p[10],
            color: Vec3::new(p[11], p[12], p[13]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    /// Bumped every time densification or pruning changes the index layout.
    pub generation: u64,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self {
            gaussians,
            generation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(n: &Quat) -> Mat3 {
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn normalized(q: &Quat) -> Result<(Quat, f64)> {
    let norm = q.norm();
    if !(norm > MIN_QUAT_NORM) || !norm.is_finite() {
        return Err(Error::DegenerateRotation { norm });
    }
    Ok((q / norm, norm))
}

/// `Σ = R·diag(s²)·Rᵀ` with `s = max(exp(log_scale), MIN_SCALE)` and `R` from
/// the normalized quaternion.
pub fn covariance_from_params(log_scale: &Vec3, rotation: &Quat) -> Result<Mat3> {
    let (n, _) = normalized(rotation)?;
    let r = rotation_matrix(&n);
    let s = log_scale.map(|v| v.exp().max(MIN_SCALE));
    let m = r * Mat3::from_diagonal(&s);
    Ok(m * m.transpose())
}

/// Pulls a gradient with respect to the covariance (as an unconstrained full
/// matrix) back to `(log_scale, rotation)`, including the quaternion
/// normalization Jacobian.
pub fn covariance_backward(log_scale: &Vec3, rotation: &Quat, grad_cov: &Mat3) -> Result<(Vec3, Quat)> {
    let (n, norm) = normalized(rotation)?;
    let r = rotation_matrix(&n);
    let s = log_scale.map(|v| v.exp().max(MIN_SCALE));
    let m = r * Mat3::from_diagonal(&s);
    // Σ = M Mᵀ  ⇒  ∂L/∂M = (G + Gᵀ) M
    let grad_m = (grad_cov + grad_cov.transpose()) * m;

    let mut grad_log_scale = Vec3::zeros();
    for k in 0..3 {
        let raw = log_scale[k].exp();
        if raw > MIN_SCALE {
            let grad_s: f64 = (0..3).map(|i| grad_m[(i, k)] * r[(i, k)]).sum();
            grad_log_scale[k] = grad_s * s[k];
        }
    }

    let grad_r = grad_m * Mat3::from_diagonal(&s);
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    let dr_dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dr_dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dr_dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dr_dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let grad_n = Quat::new(
        grad_r.component_mul(&dr_dw).sum(),
        grad_r.component_mul(&dr_dx).sum(),
        grad_r.component_mul(&dr_dy).sum(),
        grad_r.component_mul(&dr_dz).sum(),
    );
    let grad_q = (grad_n - n * n.dot(&grad_n)) / norm;
    Ok((grad_log_scale, grad_q))
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera frame follows the OpenCV convention: +z forward, +y down. Pixel
/// `(i, j)` has its center at `(j + 0.5, i + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 20.0;

impl Camera {
    /// Builds a camera from a COLMAP-style world-to-camera quaternion `(w, x, y, z)`
    /// and translation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_pose(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        quaternion: Quat,
        translation: Vec3,
    ) -> Result<Self> {
        let (n, _) = normalized(&quaternion)?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: rotation_matrix(&n),
            translation,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        })
    }

    /// World-space camera center `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Unit quaternion `(w, x, y, z)` of the world-to-camera rotation.
    pub fn quaternion(&self) -> Quat {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = q.quaternion();
        let mut out = Quat::new(q.w, q.i, q.j, q.k);
        if out[0] < 0.0 {
            out = -out;
        }
        out
    }

    /// Copies intrinsics and clip planes, replacing the pose.
    pub fn with_pose(&self, rotation: Mat3, translation: Vec3) -> Camera {
        Camera {
            rotation,
            translation,
            ..self.clone()
        }
    }

    /// Lists violated camera invariants.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            out.push(format!("clip planes must satisfy 0 < near < far (near={}, far={})", self.near, self.far));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        if !(ortho <= 1e-6) {
            out.push(format!("rotation is not orthonormal (max |RᵀR - I| = {ortho:e})"));
        }
        if self.width == 0 || self.height == 0 {
            out.push("image size must be non-zero".into());
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            out.push("translation is not finite".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidInput(v.clone())),
        }
    }
}

/// Multi-view capture: cameras, ground-truth images and optional depth priors.
#[derive(Clone, Debug, Default)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    /// Image file names; the stem keys prior files.
    pub names: Vec<String>,
    pub depth_priors: Vec<Option<DepthMap>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Scene {
    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn stem(&self, view: usize) -> &str {
        let name = &self.names[view];
        match name.rfind('.') {
            Some(dot) if dot > 0 => &name[..dot],
            _ => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub view: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

/// Checks every scene invariant; an empty report means the scene is usable.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut report = Vec::new();
    let views = scene.cameras.len();
    if scene.images.len() != views {
        report.push(Violation {
            view: None,
            field: "images",
            message: format!("{} images for {} cameras", scene.images.len(), views),
        });
    }
    if scene.names.len() != views {
        report.push(Violation {
            view: None,
            field: "names",
            message: format!("{} names for {} cameras", scene.names.len(), views),
        });
    }
    for (i, camera) in scene.cameras.iter().enumerate() {
        for message in camera.violations() {
            report.push(Violation {
                view: Some(i),
                field: "camera",
                message,
            });
        }
        if let Some(image) = scene.images.get(i) {
            if image.dims() != (camera.width, camera.height) {
                report.push(Violation {
                    view: Some(i),
                    field: "image",
                    message: format!(
                        "image is {}x{} but camera is {}x{}",
                        image.width, image.height, camera.width, camera.height
                    ),
                });
            }
        }
        if let Some(Some(prior)) = scene.depth_priors.get(i) {
            if prior.map.dims() != (camera.width, camera.height) {
                report.push(Violation {
                    view: Some(i),
                    field: "depth_prior",
                    message: format!(
                        "depth prior is {}x{} but camera is {}x{}",
                        prior.map.width, prior.map.height, camera.width, camera.height
                    ),
                });
            }
        }
    }
    for (field, list) in [("train", &scene.train), ("test", &scene.test)] {
        for &i in list {
            if i >= views {
                report.push(Violation {
                    view: Some(i),
                    field,
                    message: format!("index {i} out of range for {views} views"),
                });
            }
        }
    }
    for &i in &scene.train {
        if scene.test.contains(&i) {
            report.push(Violation {
                view: Some(i),
                field: "split",
                message: format!("view {i} is in both the train and test sets"),
            });
        }
    }
    report
}
