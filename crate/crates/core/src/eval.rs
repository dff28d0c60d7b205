//! Held-out evaluation, the LLFF-style split and weight sweeps.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::buffer::Image;
use crate::error::{io_err, Error, Result};
use crate::losses::{d_ssim, LossWeights, SsimParams};
use crate::priors::PriorSource;
use crate::rasterizer::{render, RenderSettings};
use crate::scene::{GaussianCloud, Scene};
use crate::trainer::{train, TrainConfig};

/// Reported for exact matches.
pub const PSNR_CAP: f64 = 99.0;

/// Every eighth view is held out.
pub const TEST_STRIDE: usize = 8;

/// `10·log10(1 / MSE)` on a unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(rendered: &Image, reference: &Image) -> Result<f64> {
    rendered.check_same_dims(reference)?;
    let mse = rendered
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / rendered.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean SSIM, defined as `1 − d_ssim` so the two agree exactly.
pub fn ssim(rendered: &Image, reference: &Image) -> Result<f64> {
    Ok(1.0 - d_ssim(rendered, reference, &SsimParams::default())?.value)
}

/// `num / den` rounded to nearest, halves down.
pub(crate) fn round_half_down(num: usize, den: usize) -> usize {
    let (q, r) = (num / den, num % den);
    if 2 * r > den {
        q + 1
    } else {
        q
    }
}

/// Test views `{0, 8, 16, …}`; `train_views` indices evenly spaced over the
/// rest, position `round(k·(M−1)/(n−1))` with halves rounded down.
pub fn make_llff_split(view_count: usize, train_views: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let test: Vec<usize> = (0..view_count).step_by(TEST_STRIDE).collect();
    let remaining: Vec<usize> = (0..view_count).filter(|v| v % TEST_STRIDE != 0).collect();
    let m = remaining.len();
    if train_views > m {
        return Err(Error::InvalidInput(format!(
            "{train_views} training views requested but only {m} views remain after the hold-out"
        )));
    }
    let train = match train_views {
        0 => Vec::new(),
        1 => vec![remaining[round_half_down(m - 1, 2)]],
        n => (0..n).map(|k| remaining[round_half_down(k * (m - 1), n - 1)]).collect(),
    };
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewScore {
    pub view: usize,
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub config_hash: String,
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub iteration: usize,
}

/// FNV-1a over a canonical configuration text.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn mean_psnr(cloud: &GaussianCloud, scene: &Scene, views: &[usize], settings: &RenderSettings) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views to evaluate".into()));
    }
    let mut sum = 0.0;
    for &v in views {
        let out = render(cloud, &scene.cameras[v], settings)?;
        sum += psnr(&out.color, &scene.images[v])?;
    }
    Ok(sum / views.len() as f64)
}

/// Scores `cloud` on `views` of `scene`.
pub fn evaluate(
    cloud: &GaussianCloud,
    scene: &Scene,
    views: &[usize],
    settings: &RenderSettings,
    meta: RunMetadata,
) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views to evaluate".into()));
    }
    let mut scores = Vec::with_capacity(views.len());
    for &v in views {
        let out = render(cloud, &scene.cameras[v], settings)?;
        scores.push(ViewScore {
            view: v,
            name: scene.names.get(v).cloned().unwrap_or_default(),
            psnr: psnr(&out.color, &scene.images[v])?,
            ssim: ssim(&out.color, &scene.images[v])?,
        });
    }
    let n = scores.len() as f64;
    Ok(EvalReport {
        mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        views: scores,
        config_hash: meta.config_hash,
        seed: meta.seed,
        iteration: meta.iteration,
    })
}

impl EvalReport {
    /// Fixed-width table for humans.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:>5}  {:<24} {:>9} {:>7}", "view", "name", "PSNR", "SSIM").unwrap();
        for s in &self.views {
            writeln!(out, "{:>5}  {:<24} {:>9.3} {:>7.4}", s.view, s.name, s.psnr, s.ssim).unwrap();
        }
        writeln!(out, "{:>5}  {:<24} {:>9.3} {:>7.4}", "", "mean", self.mean_psnr, self.mean_ssim).unwrap();
        out
    }

    /// One `key=value` pair per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        writeln!(out, "config_hash={}", self.config_hash).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "iteration={}", self.iteration).unwrap();
        writeln!(out, "mean_psnr={}", self.mean_psnr).unwrap();
        writeln!(out, "mean_ssim={}", self.mean_ssim).unwrap();
        for s in &self.views {
            writeln!(out, "view.{}.name={}", s.view, s.name).unwrap();
            writeln!(out, "view.{}.psnr={}", s.view, s.psnr).unwrap();
            writeln!(out, "view.{}.ssim={}", s.view, s.ssim).unwrap();
        }
        out
    }

    /// Writes `<path>` (table) and `<path>.kv` (key-value lines).
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table()).map_err(io_err(path))?;
        let mut kv = path.as_os_str().to_owned();
        kv.push(".kv");
        let kv = std::path::PathBuf::from(kv);
        std::fs::write(&kv, self.to_key_values()).map_err(io_err(&kv))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    OmegaSem,
    OmegaDepth,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::OmegaSem => "omega_sem",
            SweepAxis::OmegaDepth => "omega_depth",
        }
    }

    pub fn apply(self, weights: &mut LossWeights, value: f64) {
        match self {
            SweepAxis::OmegaSem => weights.omega_sem = value,
            SweepAxis::OmegaDepth => weights.omega_depth = value,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omega_sem" => Ok(SweepAxis::OmegaSem),
            "omega_depth" => Ok(SweepAxis::OmegaDepth),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (omega_sem | omega_depth)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// `(weight, mean held-out PSNR)` in input order.
    pub rows: Vec<(f64, f64)>,
}

impl SweepTable {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>12} {:>10}\n", self.axis.name(), "PSNR");
        for (w, p) in &self.rows {
            writeln!(out, "{w:>12.4} {p:>10.4}").unwrap();
        }
        out
    }

    /// Two whitespace-separated columns with a commented header.
    pub fn to_dat(&self) -> String {
        let mut out = format!("# {} mean_psnr\n", self.axis.name());
        for (w, p) in &self.rows {
            writeln!(out, "{w} {p}").unwrap();
        }
        out
    }
}

/// Trains and evaluates once per value of `axis`, sharing the seed.
pub fn sweep(
    scene: &Scene,
    priors: &PriorSource,
    base: &LossWeights,
    config: &TrainConfig,
    initial: &GaussianCloud,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    if scene.test.is_empty() {
        return Err(Error::InvalidInput("sweep needs held-out views".into()));
    }
    let settings = RenderSettings {
        deterministic: config.deterministic,
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut weights = base.clone();
        axis.apply(&mut weights, value);
        let result = train(scene, priors, weights, config.clone(), initial.clone())?;
        rows.push((value, mean_psnr(&result.cloud, scene, &scene.test, &settings)?));
    }
    Ok(SweepTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.3, 0.5, 0.7]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let black = Image::new(4, 4);
        let white = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert!(psnr(&a, &Image::new(4, 5)).is_err());
    }

    #[test]
    fn split_examples() {
        let (train, test) = make_llff_split(20, 3).unwrap();
        assert_eq!(test, vec![0, 8, 16]);
        assert_eq!(train, vec![1, 10, 19]);
        let (train, test) = make_llff_split(9, 1).unwrap();
        assert_eq!(test, vec![0, 8]);
        assert_eq!(train, vec![4]);
        // 21 remaining views: positions 0, 10, 20
        let (train, test) = make_llff_split(24, 3).unwrap();
        assert_eq!(test, vec![0, 8, 16]);
        assert_eq!(train, vec![1, 12, 23]);
        assert!(make_llff_split(9, 8).is_err());
    }

    #[test]
    fn halves_round_down() {
        // 4 remaining views, 3 picks: positions 0, 1.5 → 1, 3
        let (train, _) = make_llff_split(5, 3).unwrap();
        assert_eq!(train, vec![1, 2, 4]);
        let (train, _) = make_llff_split(9, 2).unwrap();
        assert_eq!(train, vec![1, 7]);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), "cbf29ce484222325");
        assert_ne!(config_hash("a=1"), config_hash("a=2"));
    }
}
