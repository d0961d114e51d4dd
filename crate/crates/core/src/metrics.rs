//! Volume and image error metrics, view buckets and summary statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Result};
use crate::geometry::{Vec3, ViewPose};
use crate::image::Image;
use crate::math;
use crate::render::{render_iso, RenderConfig};
use crate::volume::Volume;

/// Root mean squared voxel difference.
pub fn volume_l2(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(mismatch!("volumes {:?} and {:?}", a.dims(), b.dims()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(math::sqrt(sum / a.len() as f64))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1D Gaussian window; the 2D window is its outer product.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Mean SSIM over all fully contained 11x11 windows, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(mismatch!("images {:?} and {:?}", a.dims(), b.dims()));
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid!("images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let k = ssim_kernel();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|m| filter_valid(m, w, h, &k));
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (ow * oh) as f64)
}

/// Separable 'valid' filtering with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural dissimilarity `(1 - SSIM) / 2`, in `[0, 1]`.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(((1.0 - ssim(a, b)?) / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewBucket {
    Top,
    Front,
    Side,
    Other,
}

impl ViewBucket {
    pub const ALL: [ViewBucket; 4] = [ViewBucket::Top, ViewBucket::Front, ViewBucket::Side, ViewBucket::Other];

    pub fn name(self) -> &'static str {
        match self {
            ViewBucket::Top => "top",
            ViewBucket::Front => "front",
            ViewBucket::Side => "side",
            ViewBucket::Other => "other",
        }
    }
}

impl core::fmt::Display for ViewBucket {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Half-angle of the cap around each canonical axis.
pub const VIEW_BUCKET_DEGREES: f64 = 25.0;

/// Buckets a view by the canonical axis (z top, y front, x side) within
/// 25 degrees of its direction; anything else is `Other`.
pub fn classify_view(pose: &ViewPose) -> ViewBucket {
    let d = pose.direction();
    let limit = math::cos(VIEW_BUCKET_DEGREES.to_radians());
    for (axis, bucket) in [(Vec3::Z, ViewBucket::Top), (Vec3::Y, ViewBucket::Front), (Vec3::X, ViewBucket::Side)] {
        if d.dot(axis).abs() >= limit {
            return bucket;
        }
    }
    ViewBucket::Other
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// Normal-approximation 95% confidence interval of the mean.
    pub ci95: (f64, f64),
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let std_dev = math::sqrt(var);
    let half = 1.96 * std_dev / math::sqrt(n as f64);
    Some(Summary { n, mean, std_dev, ci95: (mean - half, mean + half) })
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values
/// outside the range go to the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let i = if width > 0.0 { math::floor((v - lo) / width) } else { 0.0 };
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

/// Paired t statistic of `a - b` (positive when `a` is larger on average).
pub fn paired_t(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&diffs)?;
    (s.std_dev > 0.0).then(|| s.mean / (s.std_dev / math::sqrt(s.n as f64)))
}

/// Canonical evaluation render: the original (identity) view, default iso
/// value and lighting.
pub fn evaluation_render_config(width: usize, height: usize) -> RenderConfig {
    RenderConfig::default().with_resolution(width, height)
}

/// DSSIM between iso renderings of a prediction and its ground truth.
pub fn rendered_dssim(prediction: &Volume, truth: &Volume, cfg: &RenderConfig) -> Result<f64> {
    if prediction.dims() != truth.dims() {
        return Err(mismatch!("volumes {:?} and {:?}", prediction.dims(), truth.dims()));
    }
    dssim(&render_iso(prediction, cfg)?.image, &render_iso(truth, cfg)?.image)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub species: String,
    pub bucket: ViewBucket,
    pub l2: f64,
    pub dssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketMeans {
    pub bucket: ViewBucket,
    pub count: usize,
    pub l2: f64,
    pub dssim: f64,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Aggregated evaluation of one method over the validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub samples: Vec<SampleScore>,
    /// Validation ids without a method output.
    pub missing: Vec<String>,
    pub l2: Option<Summary>,
    pub dssim: Option<Summary>,
    /// Bins over `[0, max]` of each metric.
    pub l2_histogram: (f64, Vec<usize>),
    pub dssim_histogram: (f64, Vec<usize>),
    /// Only buckets with at least one sample, in `ViewBucket::ALL` order.
    pub buckets: Vec<BucketMeans>,
}

impl Report {
    pub fn new(samples: Vec<SampleScore>, missing: Vec<String>) -> Self {
        let l2: Vec<f64> = samples.iter().map(|s| s.l2).collect();
        let ds: Vec<f64> = samples.iter().map(|s| s.dssim).collect();
        let hist = |v: &[f64]| {
            let hi = v.iter().copied().fold(0.0, f64::max);
            let hi = if hi > 0.0 { hi } else { 1.0 };
            (hi, histogram(v, HISTOGRAM_BINS, 0.0, hi))
        };
        let buckets = ViewBucket::ALL
            .iter()
            .filter_map(|&b| {
                let members: Vec<&SampleScore> = samples.iter().filter(|s| s.bucket == b).collect();
                (!members.is_empty()).then(|| {
                    let n = members.len() as f64;
                    BucketMeans {
                        bucket: b,
                        count: members.len(),
                        l2: members.iter().map(|s| s.l2).sum::<f64>() / n,
                        dssim: members.iter().map(|s| s.dssim).sum::<f64>() / n,
                    }
                })
            })
            .collect();
        Self {
            l2: summarize(&l2),
            dssim: summarize(&ds),
            l2_histogram: hist(&l2),
            dssim_histogram: hist(&ds),
            buckets,
            samples,
            missing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_closed_forms() {
        let a = Volume::from_fn([3, 3, 3], |x, _, _| 0.1 * x as f64).unwrap();
        assert_eq!(volume_l2(&a, &a).unwrap(), 0.0);
        let b = Volume::from_fn([3, 3, 3], |x, _, _| 0.1 * x as f64 + 0.1).unwrap();
        assert!((volume_l2(&a, &b).unwrap() - 0.1).abs() < 1e-6);
        assert!(volume_l2(&a, &Volume::zeros([3, 3, 2]).unwrap()).is_err());
    }

    #[test]
    fn view_buckets() {
        let pose = |x, y, z| ViewPose::from_direction(Vec3::new(x, y, z).normalized().unwrap(), false).unwrap();
        assert_eq!(classify_view(&pose(0.0, 0.0, 1.0)), ViewBucket::Top);
        assert_eq!(classify_view(&pose(1.0, 0.0, 0.0)), ViewBucket::Side);
        assert_eq!(classify_view(&pose(0.0, -1.0, 0.0)), ViewBucket::Front);
        // 54.7 degrees to every axis.
        assert_eq!(classify_view(&pose(1.0, 1.0, 1.0)), ViewBucket::Other);
        // 24 degrees off z stays top, 26 degrees does not.
        let t = |deg: f64| pose(deg.to_radians().sin(), 0.0, deg.to_radians().cos());
        assert_eq!(classify_view(&t(24.0)), ViewBucket::Top);
        assert_eq!(classify_view(&t(26.0)), ViewBucket::Other);
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let a = Image::filled(10, 12, 0.5).unwrap();
        assert!(ssim(&a, &a).is_err());
        let b = Image::filled(12, 12, 0.5).unwrap();
        let c = Image::filled(12, 13, 0.5).unwrap();
        assert!(ssim(&b, &c).is_err());
        assert_eq!(dssim(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn summary_and_histogram() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-12 && (s.std_dev - 1.0).abs() < 1e-12);
        assert!(s.ci95.0 < 2.0 && s.ci95.1 > 2.0);
        assert_eq!(histogram(&[0.0, 0.5, 0.99, 1.0, 2.0, -1.0], 2, 0.0, 1.0), vec![2, 4]);
        assert!(summarize(&[]).is_none());
        assert!(paired_t(&[1.0, 2.0, 3.0], &[0.0, 0.5, 1.5]).unwrap() > 0.0);
    }
}
