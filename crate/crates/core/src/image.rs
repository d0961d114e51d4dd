//! Grayscale images: generic float images and validated x-ray opacity images.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::volume::{gaussian_taps, lerp_index};

/// Row-major grayscale float image without value constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid!("image dims {width}x{height} must be positive"));
        }
        if data.len() != width * height {
            return Err(invalid!("image {width}x{height} needs {} pixels, got {}", width * height, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("image contains non-finite pixels"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear lookup at unit coordinates with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, x1, tx) = lerp_index(x.clamp(0.0, 1.0), self.width);
        let (y0, y1, ty) = lerp_index(y.clamp(0.0, 1.0), self.height);
        let g = |x, y| self.get(x, y) as f64;
        (g(x0, y0) * (1.0 - tx) + g(x1, y0) * tx) * (1.0 - ty) + (g(x0, y1) * (1.0 - tx) + g(x1, y1) * tx) * ty
    }

    /// Gaussian-filtered resampling, the 2D counterpart of volume resampling.
    pub fn resample(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(invalid!("target dims {width}x{height} must be positive"));
        }
        let tx = gaussian_taps(self.width, width);
        let ty = gaussian_taps(self.height, height);
        let mut rows = vec![0.0f64; width * self.height];
        for y in 0..self.height {
            let src = &self.data[y * self.width..(y + 1) * self.width];
            for (x, taps) in tx.iter().enumerate() {
                rows[y * width + x] = taps.iter().map(|&(j, w)| w * src[j] as f64).sum();
            }
        }
        let mut out = Vec::with_capacity(width * height);
        for taps in &ty {
            for x in 0..width {
                out.push(taps.iter().map(|&(j, w)| w * rows[j * width + x]).sum::<f64>() as f32);
            }
        }
        Image::new(width, height, out)
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// X-ray stored as linear opacity `1 - alpha` per pixel, each in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct XRayImage(Image);

impl XRayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::try_from(Image::new(width, height, data)?)
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.0.get(x, y)
    }

    pub fn resample(&self, width: usize, height: usize) -> Result<XRayImage> {
        // A convex combination of values in [0,1) stays in [0,1) up to rounding.
        let img = self.0.resample(width, height)?.map(clamp_opacity);
        Ok(XRayImage(img))
    }
}

impl TryFrom<Image> for XRayImage {
    type Error = crate::Error;

    fn try_from(img: Image) -> Result<Self> {
        if let Some(i) = img.data.iter().position(|v| !(0.0..1.0).contains(v)) {
            return Err(invalid!("opacity {} at pixel {i} is outside [0,1)", img.data[i]));
        }
        Ok(Self(img))
    }
}

/// Largest `f32` below one.
pub const MAX_OPACITY: f32 = 1.0 - f32::EPSILON / 2.0;

#[inline]
pub(crate) fn clamp_opacity(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, MAX_OPACITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xray_rejects_full_opacity() {
        assert!(XRayImage::new(1, 1, vec![1.0]).is_err());
        assert!(XRayImage::new(1, 1, vec![-0.1]).is_err());
        assert!(XRayImage::new(1, 1, vec![MAX_OPACITY]).is_ok());
        assert!(XRayImage::new(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn resample_preserves_constant_and_identity() {
        let img = Image::filled(9, 5, 0.25).unwrap();
        let r = img.resample(4, 3).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let ramp = Image::new(3, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(ramp.resample(3, 2).unwrap(), ramp);
    }

    #[test]
    fn bilinear_hits_pixel_centers() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((img.sample(0.75, 0.25) - 1.0).abs() < 1e-12);
        assert!((img.sample(0.5, 0.5) - 1.5).abs() < 1e-12);
    }
}
