//! Adam with per-parameter learning rates over the flattened Gaussian layout.

use crate::rasterizer::ParamGrads;
use crate::scene::{Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};

pub type Row = [f64; PARAMS_PER_GAUSSIAN];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

/// First and second moments, one row per Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub m: Vec<Row>,
    pub v: Vec<Row>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuilds the rows from a layout where `Some(i)` keeps row `i` and
    /// `None` starts a fresh zero row.
    pub fn remap(&mut self, layout: &[Option<usize>]) {
        let pick = |rows: &[Row]| -> Vec<Row> {
            layout
                .iter()
                .map(|src| src.map_or([0.0; PARAMS_PER_GAUSSIAN], |i| rows[i]))
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    /// One update of every parameter; a zero learning rate leaves its
    /// parameter bit-unchanged.
    pub fn update(&mut self, cloud: &mut GaussianCloud, grads: &ParamGrads, lr: &Row, params: &AdamParams) {
        debug_assert_eq!(cloud.len(), self.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - params.beta1.powi(t);
        let c2 = 1.0 - params.beta2.powi(t);
        for (i, g) in cloud.gaussians.iter_mut().enumerate() {
            let grad = grads.params(i);
            let mut p = g.to_params();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAMS_PER_GAUSSIAN {
                m[k] = params.beta1 * m[k] + (1.0 - params.beta1) * grad[k];
                v[k] = params.beta2 * v[k] + (1.0 - params.beta2) * grad[k] * grad[k];
                if lr[k] != 0.0 {
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    p[k] -= lr[k] * m_hat / (v_hat.sqrt() + params.epsilon);
                }
            }
            *g = Gaussian3D::from_params(&p);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|r| r.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Quat, Vec3};

    fn one() -> GaussianCloud {
        GaussianCloud::new(vec![Gaussian3D {
            position: Vec3::new(0.1, 0.2, 0.3),
            log_scale: Vec3::repeat(-2.0),
            rotation: Quat::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: 0.3,
            color: Vec3::new(0.2, 0.4, 0.6),
        }])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut cloud = one();
        let mut adam = Adam::new(1);
        let mut grads = ParamGrads::zeros(1);
        grads.position[0] = Vec3::new(3.0, -0.5, 0.0);
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        lr[0] = 0.01;
        lr[1] = 0.01;
        lr[2] = 0.01;
        adam.update(&mut cloud, &grads, &lr, &AdamParams::default());
        let p = cloud.gaussians[0].position;
        assert!((p.x - 0.09).abs() < 1e-12);
        assert!((p.y - 0.21).abs() < 1e-12);
        assert_eq!(p.z, 0.3);
    }

    #[test]
    fn remap_keeps_rows_and_zeroes_new_ones() {
        let mut adam = Adam::new(2);
        adam.m[1][0] = 5.0;
        adam.remap(&[Some(1), None, Some(1)]);
        assert_eq!(adam.len(), 3);
        assert_eq!(adam.m[0][0], 5.0);
        assert_eq!(adam.m[1][0], 0.0);
        assert_eq!(adam.m[2][0], 5.0);
    }
}
