//! Fusion of a coarse network volume with a full-resolution x-ray.
//!
//! Every pixel is handled independently. The density error between the
//! coarse column and the observed opacity is distributed over the column's
//! slices by a policy, after which the column composes back into the
//! observed pixel. Depth resolution is never increased.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Result};
use crate::image::XRayImage;
use crate::math;
use crate::volume::{lerp_index, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionPolicy {
    /// Weight slice `i` by `mu_i^beta / sum(mu^beta)`.
    #[default]
    Proportional,
    /// Spread the error evenly over all slices.
    Uniform,
    /// Put the whole error on the front slice.
    FirstSlice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Density error chosen so the fused column reproduces the target exactly.
    #[default]
    Exact,
    /// `log(1 - (alpha_coarse - alpha_target))`, without the extinction and
    /// step length factors.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Sharpness exponent; larger values push corrections onto denser slices.
    pub beta: f64,
    pub policy: FusionPolicy,
    pub error_mode: ErrorMode,
    pub chi: f64,
    /// Per-slice path length used by [`fuse_ray`]. [`fuse_volume`] always uses
    /// the slice thickness `1 / nz` of the coarse volume instead.
    pub step_length: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            policy: FusionPolicy::Proportional,
            error_mode: ErrorMode::Exact,
            chi: 10.0,
            step_length: 1.0 / 128.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(invalid!("chi must be positive, got {}", self.chi));
        }
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return Err(invalid!("step length must be positive, got {}", self.step_length));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRay {
    pub densities: Vec<f64>,
    /// Set when the policy had to fall back (no eligible slice for the
    /// proportional weights, or a column that cannot hold the target).
    pub flagged: bool,
}

/// Redistributes one pixel's density error over its coarse column. Fused
/// densities are kept non-negative.
pub fn fuse_ray(coarse: &[f64], target_opacity: f64, cfg: &FusionConfig) -> Result<FusedRay> {
    fuse_ray_bounded(coarse, target_opacity, cfg, f64::INFINITY)
}

/// [`fuse_ray`] with densities confined to `[0, upper]`.
fn fuse_ray_bounded(coarse: &[f64], target_opacity: f64, cfg: &FusionConfig, upper: f64) -> Result<FusedRay> {
    cfg.validate()?;
    if coarse.is_empty() {
        return Err(invalid!("empty ray"));
    }
    if let Some(d) = coarse.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(invalid!("coarse density {d} is negative or non-finite"));
    }
    if !(0.0..1.0).contains(&target_opacity) {
        return Err(invalid!("target opacity {target_opacity} is outside [0,1)"));
    }
    let scale = cfg.chi * cfg.step_length;
    let coarse_sum: f64 = coarse.iter().sum();
    let delta = match cfg.error_mode {
        ErrorMode::Exact => {
            let target_sum = -libm::log1p(-target_opacity) / scale;
            let d = coarse_sum - target_sum;
            if d.abs() <= 1e-12 * (1.0 + coarse_sum) {
                0.0
            } else {
                d
            }
        }
        ErrorMode::Literal => {
            let alpha_coarse = math::exp(-scale * coarse_sum);
            let alpha_target = 1.0 - target_opacity;
            math::ln(1.0 - (alpha_coarse - alpha_target))
        }
    };
    if delta == 0.0 {
        return Ok(FusedRay { densities: coarse.to_vec(), flagged: false });
    }

    let mut flagged = false;
    let mut out = coarse.to_vec();
    let all = vec![true; coarse.len()];
    let w = policy_weights(coarse, &all, cfg, &mut flagged);
    for (o, w) in out.iter_mut().zip(&w) {
        *o -= delta * w;
    }

    // Keep densities in [0, upper]: clamp violators and hand the clamped mass to
    // slices that can still absorb it, until nothing is out of range.
    let mut pinned = vec![false; out.len()];
    for _ in 0..=out.len() {
        let mut residual = 0.0;
        for (o, p) in out.iter_mut().zip(pinned.iter_mut()) {
            if *o < 0.0 {
                residual -= *o;
                *o = 0.0;
                *p = true;
            } else if *o > upper {
                residual -= *o - upper;
                *o = upper;
                *p = true;
            }
        }
        // residual > 0: clamping added density that must be removed again.
        if residual == 0.0 {
            break;
        }
        let eligible: Vec<bool> = out
            .iter()
            .zip(&pinned)
            .map(|(&o, &p)| !p && if residual > 0.0 { o > 0.0 } else { o < upper })
            .collect();
        if !eligible.iter().any(|&e| e) {
            flagged = true;
            break;
        }
        let w = policy_weights(coarse, &eligible, cfg, &mut flagged);
        for (o, w) in out.iter_mut().zip(&w) {
            *o -= residual * w;
        }
    }
    Ok(FusedRay { densities: out, flagged })
}

/// Normalized policy weights over the `eligible` slices.
fn policy_weights(coarse: &[f64], eligible: &[bool], cfg: &FusionConfig, flagged: &mut bool) -> Vec<f64> {
    let mut w = vec![0.0; coarse.len()];
    match cfg.policy {
        FusionPolicy::Proportional => {
            for (i, (&m, &e)) in coarse.iter().zip(eligible).enumerate() {
                if e {
                    w[i] = math::powf(m, cfg.beta);
                }
            }
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|x| *x /= total);
                return w;
            }
            *flagged = true;
            uniform(eligible, &mut w);
        }
        FusionPolicy::Uniform => uniform(eligible, &mut w),
        FusionPolicy::FirstSlice => {
            if let Some(i) = eligible.iter().position(|&e| e) {
                w[i] = 1.0;
            }
        }
    }
    w
}

fn uniform(eligible: &[bool], w: &mut [f64]) {
    let n = eligible.iter().filter(|&&e| e).count() as f64;
    for (x, &e) in w.iter_mut().zip(eligible) {
        *x = if e { 1.0 / n } else { 0.0 };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVolume {
    pub volume: Volume,
    /// Row-major indices of pixels whose ray was flagged by [`fuse_ray`].
    pub flagged: Vec<usize>,
}

/// Fuses a view-aligned coarse volume with a (higher resolution) x-ray taken
/// along +z. Output dims are `(w, h, coarse nz)`; each column is the coarse
/// volume sampled bilinearly at the pixel center and then fused against that
/// pixel's opacity with a step length of one slice (`1 / nz`).
pub fn fuse_volume(coarse: &Volume, image: &XRayImage, cfg: &FusionConfig) -> Result<FusedVolume> {
    let [cx, cy, nz] = coarse.dims();
    let (w, h) = image.dims();
    if w < cx || h < cy {
        return Err(mismatch!("image {w}x{h} is smaller than the coarse volume's {cx}x{cy} footprint"));
    }
    let ray_cfg = FusionConfig { step_length: 1.0 / nz as f64, ..*cfg };
    ray_cfg.validate()?;
    let plane = w * h;
    let mut data = vec![0.0f64; plane * nz];
    let mut flagged = Vec::new();
    let mut column = vec![0.0f64; nz];
    let xs: Vec<_> = (0..w).map(|i| lerp_index((i as f64 + 0.5) / w as f64, cx)).collect();
    for j in 0..h {
        let (y0, y1, ty) = lerp_index((j as f64 + 0.5) / h as f64, cy);
        for (i, &(x0, x1, tx)) in xs.iter().enumerate() {
            for (k, c) in column.iter_mut().enumerate() {
                let g = |x, y| coarse.get(x, y, k) as f64;
                *c = (g(x0, y0) * (1.0 - tx) + g(x1, y0) * tx) * (1.0 - ty)
                    + (g(x0, y1) * (1.0 - tx) + g(x1, y1) * tx) * ty;
            }
            let fused = fuse_ray_bounded(&column, image.get(i, j) as f64, &ray_cfg, 1.0)?;
            if fused.flagged {
                flagged.push(j * w + i);
            }
            for (k, d) in fused.densities.into_iter().enumerate() {
                data[k * plane + j * w + i] = d;
            }
        }
    }
    Ok(FusedVolume { volume: Volume::from_clamped([w, h, nz], data)?, flagged })
}
