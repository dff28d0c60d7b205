//! Synthetic scenes: a random ground-truth cloud seen from an arc of cameras,
//! written in the layout [`load_colmap_scene`](super::colmap::load_colmap_scene) reads.
//!
//! ```text
//! cameras.txt images.txt points3D.txt split.txt gt_cloud.sidg
//! images/view_NNN.png depth/view_NNN.pfm
//! ```

use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::buffer::Image;
use crate::error::{io_err, Error, Result};
use crate::eval::{make_llff_split, round_half_down};
use crate::io::checkpoint::{round_to_storage, write_cloud};
use crate::io::colmap::{bundle_from_scene, save_colmap_scene, PointRecord};
use crate::io::images::quantize;
use crate::io::pfm::write_pfm;
use crate::priors::DepthMap;
use crate::rasterizer::{render, RenderSettings};
use crate::scene::{logit, Camera, Gaussian3D, GaussianCloud, Mat3, Quat, Scene, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub gaussians: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Training views; `None` uses the every-eighth hold-out with three training views.
    pub train_views: Option<usize>,
    /// Camera distance from the origin.
    pub radius: f64,
    /// Angular span of the camera arc, degrees.
    pub arc_degrees: f64,
    /// Fraction of ground-truth centers exported as SfM points.
    pub point_fraction: f64,
    /// Standard deviation of the noise added to exported points.
    pub point_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            gaussians: 200,
            views: 8,
            width: 64,
            height: 64,
            seed: 0,
            train_views: Some(3),
            radius: 3.0,
            arc_degrees: 90.0,
            point_fraction: 0.5,
            point_noise: 0.03,
        }
    }
}

/// Rendered synthetic scene and the cloud it came from.
pub struct SynthScene {
    pub scene: Scene,
    pub gt_cloud: GaussianCloud,
    pub points: Vec<PointRecord>,
    /// World-to-camera quaternions the cameras were built from.
    pub quaternions: Vec<Quat>,
}

fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let gaussians = (0..n)
        .map(|_| {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            Gaussian3D {
                position: Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
                log_scale: Vec3::new(
                    rng.random_range(0.03f64.ln()..0.08f64.ln()),
                    rng.random_range(0.03f64.ln()..0.08f64.ln()),
                    rng.random_range(0.03f64.ln()..0.08f64.ln()),
                ),
                rotation: if q.norm() > 1e-3 { q } else { Quat::new(1.0, 0.0, 0.0, 0.0) },
                opacity_logit: logit(rng.random_range(0.5..0.95)),
                color: Vec3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect();
    round_to_storage(&GaussianCloud::new(gaussians))
}

/// Camera at `center` looking at the origin, +y (down) along world +y.
fn look_at_origin(center: Vec3, spec: &SynthSpec) -> Result<(Camera, Quat)> {
    let z = (-center).normalize();
    let x = Vec3::new(0.0, 1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let q = Quat::new(uq.w, uq.i, uq.j, uq.k);
    let base = Camera::from_pose(
        1.2 * spec.width as f64,
        1.2 * spec.width as f64,
        spec.width as f64 / 2.0,
        spec.height as f64 / 2.0,
        spec.width,
        spec.height,
        q,
        Vec3::zeros(),
    )?;
    let t = -(base.rotation * center);
    Ok((base.with_pose(base.rotation, t), q))
}

/// Generates the scene in memory.
pub fn synth_scene(spec: &SynthSpec) -> Result<SynthScene> {
    if spec.gaussians == 0 || spec.views == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidInput("synthetic scene counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gt_cloud = random_cloud(spec.gaussians, &mut rng);

    let mut scene = Scene::default();
    let mut quaternions = Vec::with_capacity(spec.views);
    let span = spec.arc_degrees.to_radians();
    for v in 0..spec.views {
        let frac = if spec.views == 1 {
            0.5
        } else {
            v as f64 / (spec.views - 1) as f64
        };
        let angle = -span / 2.0 + span * frac;
        let center = Vec3::new(spec.radius * angle.sin(), -0.3 * spec.radius, -spec.radius * angle.cos());
        let (camera, q) = look_at_origin(center, spec)?;
        let out = render(&gt_cloud, &camera, &RenderSettings::default())?;
        // keep exactly what the 8-bit image files will hold
        let stored = quantize(&out.color).into_iter().map(|b| b as f64 / 255.0).collect();
        scene.cameras.push(camera);
        quaternions.push(q);
        scene.images.push(Image::from_data(spec.width, spec.height, stored)?);
        scene.depth_priors.push(Some(DepthMap::new(out.depth)));
        scene.names.push(format!("view_{v:03}.png"));
    }
    let (train, test) = match spec.train_views {
        Some(n) if spec.views < 9 => {
            if n > spec.views {
                return Err(Error::InvalidInput(format!("{n} training views exceed {} views", spec.views)));
            }
            // short arcs: evenly spaced training views, the rest held out
            let train: Vec<usize> = (0..n)
                .map(|k| {
                    if n == 1 {
                        spec.views / 2
                    } else {
                        round_half_down(k * (spec.views - 1), n - 1)
                    }
                })
                .collect();
            let test = (0..spec.views).filter(|v| !train.contains(v)).collect();
            (train, test)
        }
        other => make_llff_split(spec.views, other.unwrap_or(3))?,
    };
    scene.train = train;
    scene.test = test;

    let take = ((spec.gaussians as f64 * spec.point_fraction).round() as usize).clamp(1, spec.gaussians);
    let noise = Normal::new(0.0, spec.point_noise.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let points = gt_cloud.gaussians[..take]
        .iter()
        .enumerate()
        .map(|(i, g)| PointRecord {
            id: i as u64 + 1,
            position: g.position.map(|p| ((p + noise.sample(&mut rng)) as f32) as f64),
            rgb: [0, 1, 2].map(|k| (g.color[k] * 255.0).round() as u8),
        })
        .collect();

    Ok(SynthScene {
        scene,
        gt_cloud,
        points,
        quaternions,
    })
}

/// Generates and writes the scene to `dir`.
pub fn write_synth_scene(dir: &Path, spec: &SynthSpec) -> Result<SynthScene> {
    let synth = synth_scene(spec)?;
    let mut bundle = bundle_from_scene(&synth.scene, synth.points.clone());
    for (record, q) in bundle.images.iter_mut().zip(&synth.quaternions) {
        record.quaternion = *q;
    }
    save_colmap_scene(dir, &synth.scene, &bundle)?;
    let depth_dir = dir.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(io_err(&depth_dir))?;
    for v in 0..synth.scene.view_count() {
        if let Some(d) = &synth.scene.depth_priors[v] {
            write_pfm(&depth_dir.join(format!("{}.pfm", synth.scene.stem(v))), d)?;
        }
    }
    write_cloud(&dir.join("gt_cloud.sidg"), &synth.gt_cloud)?;
    Ok(synth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            gaussians: 20,
            views: 4,
            width: 24,
            height: 16,
            ..Default::default()
        }
    }

    #[test]
    fn cameras_face_the_origin() {
        let s = synth_scene(&small()).unwrap();
        for cam in &s.scene.cameras {
            let p = cam.world_to_camera(&Vec3::zeros());
            assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
        }
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let s = synth_scene(&small()).unwrap();
        assert_eq!(s.scene.train, vec![0, 1, 3]);
        assert_eq!(s.scene.test, vec![2]);
        let s = synth_scene(&SynthSpec {
            views: 8,
            ..small()
        })
        .unwrap();
        assert_eq!(s.scene.train, vec![0, 3, 7]);
        assert_eq!(s.scene.test, vec![1, 2, 4, 5, 6]);
    }

    #[test]
    fn images_are_not_blank() {
        let s = synth_scene(&small()).unwrap();
        assert!(s.scene.images.iter().all(|im| im.data.iter().any(|&v| v > 0.05)));
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(synth_scene(&SynthSpec {
            gaussians: 0,
            ..small()
        })
        .is_err());
    }
}
