//! Beer-Lambert x-ray synthesis by front-to-back ray marching.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{unit_cube_span, Vec3, ViewFrame, ViewPose};
use crate::image::{clamp_opacity, Image, XRayImage};
use crate::math;
use crate::volume::Volume;

/// Default ingestion gamma for display-encoded scans.
pub const DEFAULT_GAMMA: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectorConfig {
    /// Extinction coefficient (absorption plus out-scattering).
    pub chi: f64,
    /// Samples per ray.
    pub n_steps: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self { chi: 10.0, n_steps: 128, width: 256, height: 256 }
    }
}

impl ProjectorConfig {
    pub fn with_resolution(self, width: usize, height: usize) -> Self {
        Self { width, height, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(invalid!("chi must be positive, got {}", self.chi));
        }
        if self.n_steps == 0 {
            return Err(invalid!("n_steps must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid!("resolution {}x{} must be positive", self.width, self.height));
        }
        Ok(())
    }
}

/// Fraction of radiation surviving a ray: `exp(-chi * step * sum(mu))`.
pub fn ray_transparency(densities: &[f64], chi: f64, step_length: f64) -> Result<f64> {
    if !(step_length > 0.0) {
        return Err(invalid!("step length must be positive, got {step_length}"));
    }
    if let Some(d) = densities.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(invalid!("density {d} is negative or non-finite"));
    }
    Ok(math::exp(-chi * step_length * densities.iter().sum::<f64>()))
}

/// Renders the opacity image of `v` seen along `pose`.
pub fn project(v: &Volume, pose: &ViewPose, cfg: &ProjectorConfig) -> Result<XRayImage> {
    project_frame(v, &pose.frame()?, cfg)
}

/// Orthographic projection for an arbitrary frame (any direction, including
/// the negative hemisphere). One ray per pixel spans the line's intersection
/// with the unit cube in `n_steps` equal midpoint steps.
pub fn project_frame(v: &Volume, frame: &ViewFrame, cfg: &ProjectorConfig) -> Result<XRayImage> {
    cfg.validate()?;
    let n = cfg.n_steps;
    let mut data = Vec::with_capacity(cfg.width * cfg.height);
    for j in 0..cfg.height {
        let ly = (j as f64 + 0.5) / cfg.height as f64;
        for i in 0..cfg.width {
            let lx = (i as f64 + 0.5) / cfg.width as f64;
            let origin = frame.to_world(Vec3::new(lx, ly, 0.5));
            let depth = match unit_cube_span(origin, frame.w) {
                Some((t0, t1)) => {
                    let step = (t1 - t0) / n as f64;
                    let sum: f64 = (0..n)
                        .map(|k| v.sample(origin + frame.w * (t0 + (k as f64 + 0.5) * step)))
                        .sum();
                    cfg.chi * step * sum
                }
                None => 0.0,
            };
            data.push(clamp_opacity(-libm::expm1(-depth) as f32));
        }
    }
    XRayImage::new(cfg.width, cfg.height, data)
}

/// Maps display-encoded values towards linear opacity: `v -> v^gamma`.
pub fn gamma_decode(img: &Image, gamma: f64) -> Result<Image> {
    apply_gamma(img, gamma)
}

/// Inverse of [`gamma_decode`]: `v -> v^(1/gamma)`.
pub fn gamma_encode(img: &Image, gamma: f64) -> Result<Image> {
    if !(gamma > 0.0) {
        return Err(invalid!("gamma must be positive, got {gamma}"));
    }
    apply_gamma(img, 1.0 / gamma)
}

fn apply_gamma(img: &Image, exponent: f64) -> Result<Image> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(invalid!("gamma must be positive, got {exponent}"));
    }
    if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid!("gamma input {v} is outside [0,1]"));
    }
    Ok(img.map(|v| math::powf(v as f64, exponent) as f32))
}

impl XRayImage {
    /// Clamps an arbitrary image into the valid opacity range.
    pub fn from_image_clamped(img: &Image) -> XRayImage {
        XRayImage::try_from(img.map(clamp_opacity)).expect("clamped opacities are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn transparency_closed_forms() {
        assert_eq!(ray_transparency(&[0.0; 128], 10.0, 1.0 / 128.0).unwrap(), 1.0);
        let a = ray_transparency(&[0.1; 128], 10.0, 1.0 / 128.0).unwrap();
        assert!((a - (-1.0f64).exp()).abs() < 1e-12);
        assert!((a - 0.367879).abs() < 1e-6);
        let b = ray_transparency(&[0.2, 0.3], 1.0, 1.0).unwrap();
        assert!((b - 0.606531).abs() < 1e-6);
        assert!(ray_transparency(&[-0.1], 1.0, 1.0).is_err());
        assert!(ray_transparency(&[0.1], 1.0, 0.0).is_err());
    }

    #[test]
    fn empty_volume_projects_to_zero() {
        let v = Volume::zeros([8, 8, 8]).unwrap();
        let cfg = ProjectorConfig::default().with_resolution(16, 16);
        let img = project(&v, &ViewPose::identity(), &cfg).unwrap();
        assert!(img.data().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn constant_volume_matches_beer_lambert() {
        let v = Volume::from_fn([8, 8, 8], |_, _, _| 0.05).unwrap();
        let expect = 1.0 - (-0.5f64).exp();
        assert!((expect - 0.393469).abs() < 1e-6);
        for n in [1, 16, 128] {
            let cfg = ProjectorConfig { n_steps: n, ..ProjectorConfig::default() }.with_resolution(12, 12);
            let img = project(&v, &ViewPose::identity(), &cfg).unwrap();
            for &p in img.data() {
                assert!((p as f64 - expect).abs() < 1e-5, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn gamma_round_trip_and_fixed_points() {
        let img = Image::new(4, 1, vec![0.0, 0.2, 0.7, 1.0]).unwrap();
        assert_eq!(gamma_decode(&img, 1.0).unwrap(), img);
        let enc = gamma_encode(&img, 2.2).unwrap();
        let back = gamma_decode(&enc, 2.2).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let dec = gamma_decode(&img, 3.0).unwrap();
        assert_eq!(dec.data()[0], 0.0);
        assert_eq!(dec.data()[3], 1.0);
        assert!(gamma_decode(&img, 0.0).is_err());
        assert!(gamma_decode(&img, -1.0).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let v = Volume::zeros([2, 2, 2]).unwrap();
        let bad = ProjectorConfig { n_steps: 0, ..ProjectorConfig::default() };
        assert!(project(&v, &ViewPose::identity(), &bad).is_err());
        let bad = ProjectorConfig { chi: 0.0, ..ProjectorConfig::default() };
        assert!(project(&v, &ViewPose::identity(), &bad).is_err());
    }
}
