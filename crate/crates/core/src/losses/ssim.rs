//! Windowed SSIM with an analytic gradient.
//!
//! Statistics are taken over every fully contained window (no padding), per
//! channel, with a normalized Gaussian window.

use crate::buffer::Image;
use crate::error::{Error, Result};

use super::Scored;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let center = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - center;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

fn check(a: &Image, b: &Image, params: &SsimParams) -> Result<()> {
    a.check_same_dims(b)?;
    if params.window == 0 || a.width < params.window || a.height < params.window {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: params.window,
        });
    }
    Ok(())
}

/// Valid separable correlation of a `w×h` plane.
fn blur(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let row = &plane[y * w + x..y * w + x + k];
            horiz[y * ow + x] = row.iter().zip(taps).map(|(v, t)| v * t).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, t) in taps.iter().enumerate() {
                s += horiz[(y + j) * ow + x] * t;
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`blur`]: scatters an output-sized map back onto the input grid.
fn blur_adjoint(map: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (j, t) in taps.iter().enumerate() {
                horiz[(y + j) * ow + x] += v * t;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = horiz[y * ow + x];
            for (i, t) in taps.iter().enumerate() {
                out[y * w + x + i] += v * t;
            }
        }
    }
    out
}

fn plane(img: &Image, channel: usize) -> Vec<f64> {
    img.data.iter().skip(channel).step_by(3).copied().collect()
}

struct ChannelStats {
    ssim_sum: f64,
    windows: usize,
    /// dS/dμx, dS/dE[x²], dS/dE[xy] per window, when requested.
    coeffs: Option<[Vec<f64>; 3]>,
}

fn channel_stats(x: &[f64], y: &[f64], w: usize, h: usize, taps: &[f64], want_grad: bool) -> ChannelStats {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = blur(x, w, h, taps);
    let mu_y = blur(y, w, h, taps);
    let e_xx = blur(&sq(x, x), w, h, taps);
    let e_yy = blur(&sq(y, y), w, h, taps);
    let e_xy = blur(&sq(x, y), w, h, taps);
    let n = mu_x.len();
    let mut ssim_sum = 0.0;
    let mut coeffs = want_grad.then(|| [vec![0.0; n], vec![0.0; n], vec![0.0; n]]);
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = var_x + var_y + C2;
        let s = a1 * a2 / (b1 * b2);
        ssim_sum += s;
        if let Some([d_mu, d_exx, d_exy]) = coeffs.as_mut() {
            let ds_dvar = -s / b2;
            let ds_dcov = 2.0 * a1 / (b1 * b2);
            let ds_dmu_direct = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            d_mu[i] = ds_dmu_direct + ds_dvar * (-2.0 * mx) + ds_dcov * (-my);
            d_exx[i] = ds_dvar;
            d_exy[i] = ds_dcov;
        }
    }
    ChannelStats {
        ssim_sum,
        windows: n,
        coeffs,
    }
}

/// Mean SSIM over all windows and channels.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    check(a, b, params)?;
    let taps = params.taps();
    let (mut sum, mut count) = (0.0, 0);
    for c in 0..3 {
        let st = channel_stats(&plane(a, c), &plane(b, c), a.width, a.height, &taps, false);
        sum += st.ssim_sum;
        count += st.windows;
    }
    Ok(sum / count as f64)
}

/// `1 − SSIM(rendered, reference)` and its gradient with respect to `rendered`.
pub fn d_ssim(rendered: &Image, reference: &Image, params: &SsimParams) -> Result<Scored<Image>> {
    check(rendered, reference, params)?;
    let taps = params.taps();
    let (w, h) = rendered.dims();
    let mut grad = Image::new(w, h);
    let mut sum = 0.0;
    let mut count = 0;
    let mut per_channel = Vec::with_capacity(3);
    for c in 0..3 {
        let x = plane(rendered, c);
        let y = plane(reference, c);
        let st = channel_stats(&x, &y, w, h, &taps, true);
        sum += st.ssim_sum;
        count += st.windows;
        per_channel.push((x, y, st.coeffs.unwrap()));
    }
    let scale = -1.0 / count as f64;
    for (c, (x, y, [d_mu, d_exx, d_exy])) in per_channel.into_iter().enumerate() {
        let g_mu = blur_adjoint(&d_mu, w, h, &taps);
        let g_xx = blur_adjoint(&d_exx, w, h, &taps);
        let g_xy = blur_adjoint(&d_exy, w, h, &taps);
        for p in 0..w * h {
            grad.data[p * 3 + c] = scale * (g_mu[p] + 2.0 * x[p] * g_xx[p] + y[p] * g_xy[p]);
        }
    }
    Ok(Scored {
        value: 1.0 - sum / count as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_zero_dissimilarity() {
        let img = Image::from_data(12, 12, (0..12 * 12 * 3).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let d = d_ssim(&img, &img, &SsimParams::default()).unwrap();
        assert!(d.value.abs() < 1e-12);
    }

    #[test]
    fn image_smaller_than_window_is_rejected() {
        let img = Image::new(8, 8);
        let err = d_ssim(&img, &img, &SsimParams::default()).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { window: 11, .. }));
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let err = ssim(&Image::new(12, 12), &Image::new(12, 13), &SsimParams::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let taps = SsimParams::default().taps();
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..taps.len() {
            assert_eq!(taps[i], taps[taps.len() - 1 - i]);
        }
    }

    #[test]
    fn blur_adjoint_satisfies_inner_product_identity() {
        let (w, h) = (9, 7);
        let taps = SsimParams { window: 3, sigma: 1.0 }.taps();
        let x: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..(w - 2) * (h - 2)).map(|i| ((i * 13) % 5) as f64 - 2.0).collect();
        let lhs: f64 = blur(&x, w, h, &taps).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(blur_adjoint(&y, w, h, &taps)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
