//! Synthesized side-view cameras between pairs of training cameras.

use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scene::{Camera, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct SideViewSpec {
    /// Indices of the two parent training views.
    pub parents: (usize, usize),
    /// Interpolation parameter in `[0, 1]`; 0 gives the first parent.
    pub t: f64,
    /// Center jitter as a fraction of the parent baseline.
    pub jitter: f64,
    pub seed: u64,
}

impl SideViewSpec {
    pub fn validate(&self) -> Result<()> {
        if self.parents.0 == self.parents.1 {
            return Err(Error::InvalidInput("side view parents must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::InvalidInput(format!("interpolation t={} outside [0, 1]", self.t)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidInput(format!("jitter {} must be non-negative", self.jitter)));
        }
        Ok(())
    }
}

/// Interpolates a camera between `cam_a` and `cam_b`.
///
/// The center is linearly interpolated and pushed by `jitter · baseline` in a
/// seeded random direction; the rotation is slerped. Intrinsics and clip
/// planes come from `cam_a`.
pub fn sample_side_pose(cam_a: &Camera, cam_b: &Camera, spec: &SideViewSpec) -> Result<Camera> {
    spec.validate()?;
    let (ca, cb) = (cam_a.center(), cam_b.center());
    let baseline = (cb - ca).norm();
    if baseline == 0.0 && spec.jitter == 0.0 {
        log::warn!(
            "side view parents {:?} share a camera center; reusing the first pose",
            spec.parents
        );
        return Ok(cam_a.clone());
    }

    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(cam_a.rotation));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(cam_b.rotation));
    // slerp along the shorter arc
    let qb = if qa.coords.dot(&qb.coords) < 0.0 {
        UnitQuaternion::new_unchecked(-qb.into_inner())
    } else {
        qb
    };
    let rotation = qa
        .try_slerp(&qb, spec.t, 1e-12)
        .unwrap_or(qa)
        .to_rotation_matrix()
        .into_inner();

    let mut center = ca + (cb - ca) * spec.t;
    if spec.jitter > 0.0 && baseline > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dir = loop {
            let n = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let len = n.norm();
            if len > 1e-9 {
                break n / len;
            }
        };
        center += dir * (spec.jitter * baseline);
    }
    let translation = -(rotation * center);
    Ok(cam_a.with_pose(rotation, translation))
}

/// Parameters for drawing side views during training.
#[derive(Clone, Debug, PartialEq)]
pub struct SideViewSampling {
    pub t_min: f64,
    pub t_max: f64,
    pub jitter: f64,
}

impl Default for SideViewSampling {
    fn default() -> Self {
        Self {
            t_min: 0.2,
            t_max: 0.8,
            jitter: 0.05,
        }
    }
}

/// Index (into `views`) of the training camera nearest to `center`, skipping `exclude`.
pub fn nearest_view(cameras: &[Camera], views: &[usize], center: &Vec3, exclude: Option<usize>) -> Option<usize> {
    views
        .iter()
        .copied()
        .filter(|&v| Some(v) != exclude)
        .min_by(|&a, &b| {
            let da = (cameras[a].center() - center).norm();
            let db = (cameras[b].center() - center).norm();
            da.total_cmp(&db).then(a.cmp(&b))
        })
}

/// Draws a side-view spec: a random training view paired with its nearest
/// training neighbour, `t` uniform in `[t_min, t_max]`.
pub fn draw_side_spec(
    cameras: &[Camera],
    train: &[usize],
    sampling: &SideViewSampling,
    rng: &mut impl Rng,
) -> Option<SideViewSpec> {
    if train.len() < 2 {
        return None;
    }
    let a = train[rng.random_range(0..train.len())];
    let b = nearest_view(cameras, train, &cameras[a].center(), Some(a))?;
    let t = if sampling.t_max > sampling.t_min {
        rng.random_range(sampling.t_min..=sampling.t_max)
    } else {
        sampling.t_min
    };
    Some(SideViewSpec {
        parents: (a, b),
        t,
        jitter: sampling.jitter,
        seed: rng.random(),
    })
}
