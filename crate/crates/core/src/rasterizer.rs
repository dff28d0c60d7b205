//! Differentiable splatting renderer.
//!
//! Each Gaussian is projected with the EWA approximation, splats are sorted by
//! camera-space depth and composited front to back per pixel. Color and depth
//! share the compositing weights `w_i = α_i ∏_{j<i} (1 - α_j)`. The forward
//! pass records every contributing splat per pixel so the backward pass can
//! replay compositing in reverse without re-sorting.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::buffer::{Image, Map};
use crate::error::{Error, Result};
use crate::scene::{covariance_backward, Camera, GaussianCloud, Mat3, Quat, Vec3};

/// Isotropic screen-space variance (px²) added to every projected covariance.
pub const COV2_FLOOR: f64 = 0.3;
/// Upper clip on per-splat alpha.
pub const MAX_ALPHA: f64 = 0.99;
/// Splats whose alpha at a pixel falls below this are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Pixels whose accumulated alpha is at or below this report the far plane as depth.
pub const MIN_DEPTH_WEIGHT: f64 = 1e-6;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    /// Pixel coordinates of the projected mean.
    pub mean2: Vec2,
    /// Screen-space covariance including [`COV2_FLOOR`].
    pub cov2: Mat2,
    pub view_depth: f64,
    pub gaussian_index: usize,
}

/// Projects one Gaussian.
///
/// Returns `Ok(None)` when the Gaussian is culled: behind the near plane, or
/// its footprint misses the image. The footprint is the ellipse on which the
/// splat's unclipped alpha reaches [`MIN_ALPHA`], so a culled Gaussian can never
/// contribute to any pixel.
pub fn project(
    camera: &Camera,
    position: &Vec3,
    cov3: &Mat3,
    opacity: f64,
    gaussian_index: usize,
) -> Result<Option<Projected2D>> {
    Ok(project_full(camera, position, cov3, opacity, gaussian_index)?.map(|p| p.projected))
}

/// Projection plus the intermediates the backward pass needs.
#[derive(Clone, Debug)]
struct ProjectionRecord {
    projected: Projected2D,
    cam_point: Vec3,
    jacobian: Matrix2x3<f64>,
    bbox: PixelBox,
}

#[derive(Clone, Copy, Debug)]
struct PixelBox {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn project_full(
    camera: &Camera,
    position: &Vec3,
    cov3: &Mat3,
    opacity: f64,
    gaussian_index: usize,
) -> Result<Option<ProjectionRecord>> {
    if !position.iter().all(|v| v.is_finite()) || !cov3.iter().all(|v| v.is_finite()) || !opacity.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite parameters for Gaussian {gaussian_index}"
        )));
    }
    let t = camera.world_to_camera(position);
    let z = t.z;
    if z <= camera.near {
        return Ok(None);
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let mean2 = Vec2::new(fx * t.x / z + camera.cx, fy * t.y / z + camera.cy);
    let jacobian = Matrix2x3::new(
        fx / z,
        0.0,
        -fx * t.x / (z * z),
        0.0,
        fy / z,
        -fy * t.y / (z * z),
    );
    let m = jacobian * camera.rotation;
    let cov2 = m * cov3 * m.transpose() + Mat2::identity() * COV2_FLOOR;

    // Largest Mahalanobis radius² at which opacity·exp(-r²/2) ≥ MIN_ALPHA.
    let reach = 2.0 * (opacity / MIN_ALPHA).ln();
    if !(reach > 0.0) {
        return Ok(None);
    }
    let half_w = (reach * cov2[(0, 0)]).sqrt();
    let half_h = (reach * cov2[(1, 1)]).sqrt();
    // pixel j is inside when |j + 0.5 - u| ≤ half_w
    let lo_x = (mean2.x - half_w - 0.5).ceil();
    let hi_x = (mean2.x + half_w - 0.5).floor();
    let lo_y = (mean2.y - half_h - 0.5).ceil();
    let hi_y = (mean2.y + half_h - 0.5).floor();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if hi_x < 0.0 || hi_y < 0.0 || lo_x > w - 1.0 || lo_y > h - 1.0 || lo_x > hi_x || lo_y > hi_y {
        return Ok(None);
    }
    let bbox = PixelBox {
        x0: lo_x.max(0.0) as usize,
        x1: hi_x.min(w - 1.0) as usize,
        y0: lo_y.max(0.0) as usize,
        y1: hi_y.min(h - 1.0) as usize,
    };
    Ok(Some(ProjectionRecord {
        projected: Projected2D {
            mean2,
            cov2,
            view_depth: z,
            gaussian_index,
        },
        cam_point: t,
        jacobian,
        bbox,
    }))
}

#[derive(Clone, Debug)]
pub struct RenderSettings {
    pub background: Vec3,
    /// Fixes the gradient reduction partition so results do not depend on the
    /// thread count.
    pub deterministic: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: Vec3::zeros(),
            deterministic: true,
        }
    }
}

/// A splat that survived culling, in depth order.
#[derive(Clone, Debug)]
struct Splat {
    record: ProjectionRecord,
    conic: Mat2,
    opacity: f64,
    color: Vec3,
    log_scale: Vec3,
    rotation: Quat,
    cov3: Mat3,
}

#[derive(Clone, Copy, Debug)]
struct Contribution {
    splat: u32,
    alpha: f64,
    /// Transmittance before this splat.
    transmittance: f64,
    clipped: bool,
}

/// Saved forward state for [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderContext {
    camera: Camera,
    background: Vec3,
    deterministic: bool,
    cloud_len: usize,
    splats: Vec<Splat>,
    pixel_start: Vec<usize>,
    contributions: Vec<Contribution>,
    final_transmittance: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    /// Weight-normalized composited depth; the far plane where nothing landed.
    pub depth: Map,
    pub alpha_acc: Map,
    pub ctx: RenderContext,
}

impl RenderContext {
    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// Number of splats that survived culling.
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }

    /// Indices of Gaussians that survived culling, in compositing order.
    pub fn visible_indices(&self) -> Vec<usize> {
        self.splats.iter().map(|s| s.record.projected.gaussian_index).collect()
    }

    /// Per-pixel transmittance sequence `T_0 = 1, T_1, …, T_final`.
    pub fn transmittance_trace(&self, x: usize, y: usize) -> Vec<f64> {
        let p = y * self.camera.width + x;
        let mut out: Vec<f64> = self.contributions[self.pixel_start[p]..self.pixel_start[p + 1]]
            .iter()
            .map(|c| c.transmittance)
            .collect();
        out.push(self.final_transmittance[p]);
        out
    }

    /// Compositing weights of the splats covering a pixel, front to back,
    /// paired with the Gaussian index.
    pub fn pixel_weights(&self, x: usize, y: usize) -> Vec<(usize, f64)> {
        let p = y * self.camera.width + x;
        self.contributions[self.pixel_start[p]..self.pixel_start[p + 1]]
            .iter()
            .map(|c| {
                (
                    self.splats[c.splat as usize].record.projected.gaussian_index,
                    c.alpha * c.transmittance,
                )
            })
            .collect()
    }
}

fn conic_of(cov2: &Mat2) -> Result<Mat2> {
    let det = cov2.determinant();
    if !(det > 0.0) {
        return Err(Error::InvalidInput(format!("singular screen covariance (det {det:e})")));
    }
    Ok(Mat2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det)
}

/// Renders color, depth and accumulated alpha for one camera.
pub fn render(cloud: &GaussianCloud, camera: &Camera, settings: &RenderSettings) -> Result<RenderOutput> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot render an empty cloud".into()));
    }
    camera.validate()?;

    let mut splats = Vec::new();
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let cov3 = g.covariance()?;
        let opacity = g.opacity();
        if let Some(record) = project_full(camera, &g.position, &cov3, opacity, index)? {
            let conic = conic_of(&record.projected.cov2)?;
            splats.push(Splat {
                record,
                conic,
                opacity,
                color: g.color,
                log_scale: g.log_scale,
                rotation: g.rotation,
                cov3,
            });
        }
    }
    splats.sort_by(|a, b| {
        let (pa, pb) = (&a.record.projected, &b.record.projected);
        pa.view_depth
            .total_cmp(&pb.view_depth)
            .then(pa.gaussian_index.cmp(&pb.gaussian_index))
    });

    let (width, height) = (camera.width, camera.height);
    let pixels = width * height;

    // Counting sort of splat ids into per-pixel bins; bins inherit depth order.
    let mut counts = vec![0usize; pixels + 1];
    for s in &splats {
        let b = s.record.bbox;
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                counts[y * width + x + 1] += 1;
            }
        }
    }
    for i in 0..pixels {
        counts[i + 1] += counts[i];
    }
    let mut bins = vec![0u32; counts[pixels]];
    let mut cursor = counts.clone();
    for (id, s) in splats.iter().enumerate() {
        let b = s.record.bbox;
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                let p = y * width + x;
                bins[cursor[p]] = id as u32;
                cursor[p] += 1;
            }
        }
    }

    struct RowOut {
        color: Vec<f64>,
        depth: Vec<f64>,
        alpha: Vec<f64>,
        transmittance: Vec<f64>,
        lens: Vec<usize>,
        contributions: Vec<Contribution>,
    }

    let background = settings.background;
    let far = camera.far;
    let rows: Vec<RowOut> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut out = RowOut {
                color: Vec::with_capacity(width * 3),
                depth: Vec::with_capacity(width),
                alpha: Vec::with_capacity(width),
                transmittance: Vec::with_capacity(width),
                lens: Vec::with_capacity(width),
                contributions: Vec::new(),
            };
            for x in 0..width {
                let p = y * width + x;
                let pix = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut t = 1.0;
                let mut c = Vec3::zeros();
                let mut d = 0.0;
                let mut acc = 0.0;
                let before = out.contributions.len();
                for &id in &bins[counts[p]..counts[p + 1]] {
                    let s = &splats[id as usize];
                    let delta = pix - s.record.projected.mean2;
                    let power = -0.5 * (delta.transpose() * s.conic * delta)[(0, 0)];
                    let raw = s.opacity * power.exp();
                    if raw < MIN_ALPHA {
                        continue;
                    }
                    let clipped = raw > MAX_ALPHA;
                    let alpha = if clipped { MAX_ALPHA } else { raw };
                    let w = alpha * t;
                    c += s.color * w;
                    d += s.record.projected.view_depth * w;
                    acc += w;
                    out.contributions.push(Contribution {
                        splat: id,
                        alpha,
                        transmittance: t,
                        clipped,
                    });
                    t *= 1.0 - alpha;
                }
                c += background * t;
                out.color.extend_from_slice(c.as_slice());
                out.depth.push(if acc > MIN_DEPTH_WEIGHT { d / acc } else { far });
                out.alpha.push(acc);
                out.transmittance.push(t);
                out.lens.push(out.contributions.len() - before);
            }
            out
        })
        .collect();

    let mut color = Vec::with_capacity(pixels * 3);
    let mut depth = Vec::with_capacity(pixels);
    let mut alpha = Vec::with_capacity(pixels);
    let mut final_transmittance = Vec::with_capacity(pixels);
    let mut pixel_start = Vec::with_capacity(pixels + 1);
    let mut contributions = Vec::new();
    pixel_start.push(0);
    for row in rows {
        color.extend(row.color);
        depth.extend(row.depth);
        alpha.extend(row.alpha);
        final_transmittance.extend(row.transmittance);
        for len in row.lens {
            let last = *pixel_start.last().unwrap();
            pixel_start.push(last + len);
        }
        contributions.extend(row.contributions);
    }

    Ok(RenderOutput {
        color: Image::from_data(width, height, color)?,
        depth: Map::from_data(width, height, depth)?,
        alpha_acc: Map::from_data(width, height, alpha)?,
        ctx: RenderContext {
            camera: camera.clone(),
            background,
            deterministic: settings.deterministic,
            cloud_len: cloud.len(),
            splats,
            pixel_start,
            contributions,
            final_transmittance,
        },
    })
}

/// Gradients with respect to every Gaussian parameter, indexed like the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub position: Vec<Vec3>,
    pub log_scale: Vec<Vec3>,
    pub rotation: Vec<Quat>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl ParamGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); n],
            log_scale: vec![Vec3::zeros(); n],
            rotation: vec![Quat::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for i in 0..self.len() {
            self.position[i] += other.position[i];
            self.log_scale[i] += other.log_scale[i];
            self.rotation[i] += other.rotation[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            self.color[i] += other.color[i];
        }
    }

    /// Flattened gradient of Gaussian `i`, in parameter declaration order.
    pub fn params(&self, i: usize) -> [f64; crate::scene::PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; crate::scene::PARAMS_PER_GAUSSIAN];
        out[0..3].copy_from_slice(self.position[i].as_slice());
        out[3..6].copy_from_slice(self.log_scale[i].as_slice());
        out[6..10].copy_from_slice(self.rotation[i].as_slice());
        out[10] = self.opacity_logit[i];
        out[11..14].copy_from_slice(self.color[i].as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|i| self.params(i).iter().all(|v| v.is_finite()))
    }
}

/// Per-splat screen-space gradient accumulator.
#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad {
    mean2: [f64; 2],
    /// ∂L/∂(a, b, c) for the conic `[[a, b], [b, c]]` with `q = aΔx² + 2bΔxΔy + cΔy²`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean2[0] += o.mean2[0];
        self.mean2[1] += o.mean2[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

const DETERMINISTIC_BANDS: usize = 16;

/// Reverse-mode pass through compositing and projection.
///
/// `dl_dcolor` is `H×W×3`, `dl_ddepth` is `H×W`; both refer to the outputs of
/// the [`render`] call that produced `out`.
pub fn render_backward(out: &RenderOutput, dl_dcolor: &Image, dl_ddepth: &Map) -> Result<ParamGrads> {
    let ctx = &out.ctx;
    let (width, height) = (ctx.camera.width, ctx.camera.height);
    if dl_dcolor.dims() != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            actual: dl_dcolor.dims(),
        });
    }
    if dl_ddepth.dims() != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            actual: dl_ddepth.dims(),
        });
    }
    if !dl_dcolor.data.iter().chain(&dl_ddepth.data).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite gradient map".into()));
    }

    let bands = if ctx.deterministic {
        DETERMINISTIC_BANDS
    } else {
        rayon::current_num_threads()
    }
    .clamp(1, height.max(1));
    let rows_per_band = height.div_ceil(bands);
    let nsplats = ctx.splats.len();

    let partials: Vec<Vec<SplatGrad>> = (0..bands)
        .into_par_iter()
        .map(|band| {
            let mut acc = vec![SplatGrad::default(); nsplats];
            let y_end = ((band + 1) * rows_per_band).min(height);
            for y in band * rows_per_band..y_end {
                for x in 0..width {
                    pixel_backward(ctx, out, dl_dcolor, dl_ddepth, x, y, &mut acc);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![SplatGrad::default(); nsplats];
    for part in &partials {
        for (dst, src) in screen.iter_mut().zip(part) {
            dst.add(src);
        }
    }

    let mut grads = ParamGrads::zeros(ctx.cloud_len);
    for (splat, g) in ctx.splats.iter().zip(&screen) {
        splat_backward(&ctx.camera, splat, g, &mut grads)?;
    }
    Ok(grads)
}

fn pixel_backward(
    ctx: &RenderContext,
    out: &RenderOutput,
    dl_dcolor: &Image,
    dl_ddepth: &Map,
    x: usize,
    y: usize,
    acc: &mut [SplatGrad],
) {
    let width = ctx.camera.width;
    let p = y * width + x;
    let contribs = &ctx.contributions[ctx.pixel_start[p]..ctx.pixel_start[p + 1]];
    if contribs.is_empty() {
        return;
    }
    let g_color = Vec3::from_column_slice(&dl_dcolor.data[p * 3..p * 3 + 3]);
    let alpha_acc = out.alpha_acc.data[p];
    // normalized depth D = S / A contributes g_D/A · (z_i − D) to each weight
    let (g_depth_w, depth_out) = if alpha_acc > MIN_DEPTH_WEIGHT {
        (dl_ddepth.data[p] / alpha_acc, out.depth.data[p])
    } else {
        (0.0, 0.0)
    };
    let pix = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);

    // Σ_{k>i} g_{w_k} w_k plus the background term; divided by (1 − α_i) it
    // is the dependence of everything behind splat i on its alpha.
    let mut behind = g_color.dot(&ctx.background) * ctx.final_transmittance[p];
    for c in contribs.iter().rev() {
        let s = &ctx.splats[c.splat as usize];
        let z = s.record.projected.view_depth;
        let w = c.alpha * c.transmittance;
        let g_w = g_color.dot(&s.color) + g_depth_w * (z - depth_out);
        let g_alpha = g_w * c.transmittance - behind / (1.0 - c.alpha);
        behind += g_w * w;

        let g = &mut acc[c.splat as usize];
        g.color[0] += g_color.x * w;
        g.color[1] += g_color.y * w;
        g.color[2] += g_color.z * w;
        g.depth += g_depth_w * w;

        if c.clipped {
            continue;
        }
        let delta = pix - s.record.projected.mean2;
        let gauss = c.alpha / s.opacity;
        g.opacity += g_alpha * gauss;
        // α = o·exp(−q/2)
        let g_q = -0.5 * c.alpha * g_alpha;
        g.conic[0] += g_q * delta.x * delta.x;
        g.conic[1] += g_q * 2.0 * delta.x * delta.y;
        g.conic[2] += g_q * delta.y * delta.y;
        // ∂q/∂mean2 = −2·A·Δ
        let a_delta = s.conic * delta;
        g.mean2[0] += g_q * -2.0 * a_delta.x;
        g.mean2[1] += g_q * -2.0 * a_delta.y;
    }
}

fn splat_backward(camera: &Camera, splat: &Splat, g: &SplatGrad, grads: &mut ParamGrads) -> Result<()> {
    let i = splat.record.projected.gaussian_index;
    grads.color[i] += Vec3::new(g.color[0], g.color[1], g.color[2]);
    grads.opacity_logit[i] += g.opacity * splat.opacity * (1.0 - splat.opacity);

    // conic → screen covariance
    let cov2 = &splat.record.projected.cov2;
    let (xx, xy, yy) = (cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]);
    let det = xx * yy - xy * xy;
    let det2 = det * det;
    let [ga, gb, gc] = g.conic;
    let g_xx = ga * (-yy * yy / det2) + gb * (xy * yy / det2) + gc * (-xy * xy / det2);
    let g_xy = ga * (2.0 * yy * xy / det2)
        + gb * (-1.0 / det - 2.0 * xy * xy / det2)
        + gc * (2.0 * xx * xy / det2);
    let g_yy = ga * (-xy * xy / det2) + gb * (xy * xx / det2) + gc * (-xx * xx / det2);

    // cov2 = M Σ Mᵀ + floor with M = J W; rows m0, m1
    let m = splat.record.jacobian * camera.rotation;
    let m0 = m.row(0).transpose();
    let m1 = m.row(1).transpose();
    let sigma = &splat.cov3;
    let grad_cov3 = m0 * m0.transpose() * g_xx + m0 * m1.transpose() * g_xy + m1 * m1.transpose() * g_yy;
    let g_m0 = sigma * m0 * (2.0 * g_xx) + sigma * m1 * g_xy;
    let g_m1 = sigma * m0 * g_xy + sigma * m1 * (2.0 * g_yy);
    let g_m = Matrix2x3::from_rows(&[g_m0.transpose(), g_m1.transpose()]);
    let g_j = g_m * camera.rotation.transpose();

    let t = &splat.record.cam_point;
    let (fx, fy) = (camera.fx, camera.fy);
    let (z, z2, z3) = (t.z, t.z * t.z, t.z * t.z * t.z);
    let mut g_t = Vec3::zeros();
    g_t.x += g_j[(0, 2)] * (-fx / z2);
    g_t.y += g_j[(1, 2)] * (-fy / z2);
    g_t.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * t.x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * t.y / z3);
    let [gu, gv] = g.mean2;
    g_t.x += gu * fx / z;
    g_t.y += gv * fy / z;
    g_t.z += gu * (-fx * t.x / z2) + gv * (-fy * t.y / z2);
    g_t.z += g.depth;

    grads.position[i] += camera.rotation.transpose() * g_t;
    let (g_ls, g_rot) = covariance_backward(&splat.log_scale, &splat.rotation, &grad_cov3)?;
    grads.log_scale[i] += g_ls;
    grads.rotation[i] += g_rot;
    Ok(())
}
