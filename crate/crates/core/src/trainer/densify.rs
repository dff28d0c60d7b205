//! Clone/split densification and opacity pruning.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{rotation_matrix, Gaussian3D, GaussianCloud, Vec3};

use super::adam::Adam;

/// Split children shrink their scale by this factor.
pub const SPLIT_SHRINK: f64 = 1.6;

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyConfig {
    /// Mean position-gradient norm above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians with a largest scale above `percent_dense · extent` are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 200_000,
        }
    }
}

/// Position-gradient statistics accumulated between densification passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub norm_sum: Vec<f64>,
    pub grad_sum: Vec<Vec3>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            norm_sum: vec![0.0; n],
            grad_sum: vec![Vec3::zeros(); n],
            count: vec![0; n],
        }
    }

    pub fn record(&mut self, visible: &[usize], position_grads: &[Vec3]) {
        for &i in visible {
            self.norm_sum[i] += position_grads[i].norm();
            self.grad_sum[i] += position_grads[i];
            self.count[i] += 1;
        }
    }

    pub fn mean_norm(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.norm_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl DensifyReport {
    pub fn is_empty(&self) -> bool {
        self.cloned == 0 && self.split == 0 && self.pruned == 0
    }
}

/// Densifies and prunes in place, keeping `adam` aligned with the cloud.
///
/// Clones are displaced against their mean position gradient by one largest
/// standard deviation, so the pair can separate. Split children are drawn
/// from the parent's distribution with scales divided by [`SPLIT_SHRINK`].
pub fn densify_prune(
    cloud: &mut GaussianCloud,
    adam: &mut Adam,
    stats: &GradStats,
    config: &DensifyConfig,
    extent: f64,
    rng: &mut impl Rng,
) -> Result<DensifyReport> {
    let n = cloud.len();
    let mut report = DensifyReport::default();
    let mut budget = config.max_gaussians.saturating_sub(n);
    let split_above = config.percent_dense * extent;

    // (gaussian, source row) pairs; the source row is None for new Gaussians
    let mut next: Vec<(Gaussian3D, Option<usize>)> = Vec::with_capacity(n);
    let mut children: Vec<Gaussian3D> = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let hot = stats.count.get(i).is_some_and(|&c| c > 0) && stats.mean_norm(i) > config.grad_threshold;
        if !hot || budget == 0 {
            next.push((g.clone(), Some(i)));
            continue;
        }
        let scale = g.scale();
        let largest = scale.max();
        if largest > split_above {
            let rot = rotation_matrix(&g.rotation.normalize());
            for _ in 0..2 {
                let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let mut child = g.clone();
                child.position = g.position + rot * scale.component_mul(&z);
                child.log_scale = g.log_scale.map(|s| s - SPLIT_SHRINK.ln());
                children.push(child);
            }
            report.split += 1;
            budget -= 1;
        } else {
            next.push((g.clone(), Some(i)));
            let mut clone = g.clone();
            let dir = stats.grad_sum[i];
            if dir.norm() > 0.0 {
                clone.position -= dir.normalize() * largest;
            }
            children.push(clone);
            report.cloned += 1;
            budget -= 1;
        }
    }
    next.extend(children.into_iter().map(|g| (g, None)));

    let before = next.len();
    next.retain(|(g, _)| g.opacity() >= config.prune_opacity);
    report.pruned = before - next.len();
    if next.is_empty() {
        return Err(Error::EmptyCloud);
    }

    let layout: Vec<Option<usize>> = next.iter().map(|(_, src)| *src).collect();
    if !report.is_empty() {
        cloud.gaussians = next.into_iter().map(|(g, _)| g).collect();
        cloud.generation += 1;
        adam.remap(&layout);
    }
    Ok(report)
}
