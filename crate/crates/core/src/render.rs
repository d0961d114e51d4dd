//! Orthographic iso-surface ray caster with hemisphere ambient light,
//! ambient occlusion and a slight specular highlight.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{unit_cube_span, Vec3, ViewFrame, ViewPose};
use crate::image::Image;
use crate::math;
use crate::volume::Volume;

/// Ambient radiance for normals pointing up, sideways and down the screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereLight {
    pub sky: f64,
    pub horizon: f64,
    pub ground: f64,
}

impl Default for HemisphereLight {
    fn default() -> Self {
        Self { sky: 1.0, horizon: 0.7, ground: 0.35 }
    }
}

impl HemisphereLight {
    /// `t` is the cosine between the normal and the screen-up axis.
    pub fn radiance(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        if t >= 0.0 {
            self.horizon + (self.sky - self.horizon) * t
        } else {
            self.horizon + (self.ground - self.horizon) * -t
        }
    }
}

/// Axis-aligned region of the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl ClipBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        let ok = [min.x, min.y, min.z, max.x, max.y, max.z].into_iter().all(inside)
            && min.x <= max.x
            && min.y <= max.y
            && min.z <= max.z;
        if !ok {
            return Err(invalid!("clip box {min:?}..{max:?} is not an ordered box inside the unit cube"));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub iso_value: f64,
    pub pose: ViewPose,
    pub width: usize,
    pub height: usize,
    pub ao_samples: usize,
    /// AO ray length as a fraction of the cube edge.
    pub ao_radius: f64,
    pub specular_exponent: f64,
    pub env_light: HemisphereLight,
    pub clip_box: Option<ClipBox>,
    pub eye_separation_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            iso_value: 0.1,
            pose: ViewPose::identity(),
            width: 256,
            height: 256,
            ao_samples: 16,
            ao_radius: 0.1,
            specular_exponent: 32.0,
            env_light: HemisphereLight::default(),
            clip_box: None,
            eye_separation_deg: 4.0,
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(self, width: usize, height: usize) -> Self {
        Self { width, height, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iso_value > 0.0 && self.iso_value < 1.0) {
            return Err(invalid!("iso value must lie in (0,1), got {}", self.iso_value));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid!("render resolution must be positive"));
        }
        if !(self.ao_radius > 0.0 && self.ao_radius.is_finite()) {
            return Err(invalid!("ao radius must be positive, got {}", self.ao_radius));
        }
        if !(self.specular_exponent >= 0.0 && self.specular_exponent.is_finite()) {
            return Err(invalid!("specular exponent must be non-negative"));
        }
        if !self.eye_separation_deg.is_finite() {
            return Err(invalid!("eye separation must be finite"));
        }
        Ok(())
    }
}

const AMBIENT: f64 = 0.55;
const DIFFUSE: f64 = 0.45;
const SPECULAR: f64 = 0.15;
const BISECTIONS: usize = 8;
const AO_STEPS: usize = 8;

/// Shaded gray image plus per-pixel hit mask and hit depth (view-local z,
/// infinite where the ray misses).
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub image: Image,
    pub hit: Vec<bool>,
    pub depth: Vec<f32>,
}

impl Rendering {
    pub fn hit_count(&self) -> usize {
        self.hit.iter().filter(|&&h| h).count()
    }
}

/// Interleaved RGB image, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

pub fn render_iso(v: &Volume, cfg: &RenderConfig) -> Result<Rendering> {
    render_iso_frame(v, &cfg.pose.frame()?, cfg)
}

/// Renders from an explicit frame; `cfg.pose` is ignored.
pub fn render_iso_frame(v: &Volume, frame: &ViewFrame, cfg: &RenderConfig) -> Result<Rendering> {
    cfg.validate()?;
    match &cfg.clip_box {
        Some(b) => Caster::new(&clip_volume(v, b), frame, cfg).run(),
        None => Caster::new(v, frame, cfg).run(),
    }
}

/// Iso render with the clip box region removed; identical to [`render_iso`]
/// when the config carries a box.
pub fn render_cutaway(v: &Volume, cfg: &RenderConfig) -> Result<Rendering> {
    render_iso(v, cfg)
}

/// Red-cyan anaglyph: the left eye (rotated by minus half the separation
/// about the screen vertical) feeds red, the right eye green and blue.
pub fn render_stereo(v: &Volume, cfg: &RenderConfig) -> Result<RgbImage> {
    let (left, right) = stereo_pair(v, cfg)?;
    let data = left
        .image
        .data()
        .iter()
        .zip(right.image.data())
        .map(|(&l, &r)| [l, r, r])
        .collect();
    Ok(RgbImage { width: cfg.width, height: cfg.height, data })
}

pub fn stereo_pair(v: &Volume, cfg: &RenderConfig) -> Result<(Rendering, Rendering)> {
    let frame = cfg.pose.frame()?;
    let half = cfg.eye_separation_deg.to_radians() / 2.0;
    let left = render_iso_frame(v, &frame.rotated_about_vertical(-half), cfg)?;
    let right = render_iso_frame(v, &frame.rotated_about_vertical(half), cfg)?;
    Ok((left, right))
}

/// Copy of `v` with every voxel whose center lies in the box set to 0.
pub fn clip_volume(v: &Volume, b: &ClipBox) -> Volume {
    let [nx, ny, nz] = v.dims();
    let mut out = v.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = Vec3::new(
                    (x as f64 + 0.5) / nx as f64,
                    (y as f64 + 0.5) / ny as f64,
                    (z as f64 + 0.5) / nz as f64,
                );
                if b.contains(c) {
                    out.set(x, y, z, 0.0);
                }
            }
        }
    }
    out
}

struct Caster<'a> {
    v: &'a Volume,
    frame: &'a ViewFrame,
    cfg: &'a RenderConfig,
    step: f64,
    voxel: [f64; 3],
    light: Vec3,
    half: Vec3,
    ao_dirs: Vec<Vec3>,
}

impl<'a> Caster<'a> {
    fn new(v: &'a Volume, frame: &'a ViewFrame, cfg: &'a RenderConfig) -> Self {
        let dims = v.dims();
        let max_dim = dims.iter().copied().max().unwrap_or(1) as f64;
        let to_eye = -frame.w;
        let light = (to_eye + frame.v * 0.5 + frame.u * 0.3).normalized().unwrap_or(to_eye);
        let half = (light + to_eye).normalized().unwrap_or(to_eye);
        Self {
            v,
            frame,
            cfg,
            step: 1.0 / (2.0 * max_dim),
            voxel: dims.map(|n| 1.0 / n as f64),
            light,
            half,
            ao_dirs: hammersley_cosine(cfg.ao_samples),
        }
    }

    fn run(&self) -> Result<Rendering> {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut pixels = vec![0.0f32; w * h];
        let mut hit = vec![false; w * h];
        let mut depth = vec![f32::INFINITY; w * h];
        for j in 0..h {
            let ly = (j as f64 + 0.5) / h as f64;
            for i in 0..w {
                let lx = (i as f64 + 0.5) / w as f64;
                let origin = self.frame.to_world(Vec3::new(lx, ly, 0.5));
                if let Some(t) = self.first_crossing(origin) {
                    let p = origin + self.frame.w * t;
                    let k = j * w + i;
                    pixels[k] = self.shade(p) as f32;
                    hit[k] = true;
                    depth[k] = (t + 0.5) as f32;
                }
            }
        }
        Ok(Rendering { image: Image::new(w, h, pixels)?, hit, depth })
    }

    fn first_crossing(&self, origin: Vec3) -> Option<f64> {
        let (t0, t1) = unit_cube_span(origin, self.frame.w)?;
        let iso = self.cfg.iso_value;
        let at = |t: f64| self.v.sample(origin + self.frame.w * t);
        if at(t0) >= iso {
            return Some(t0);
        }
        let mut prev = t0;
        loop {
            let t = (prev + self.step).min(t1);
            if at(t) >= iso {
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    if at(mid) >= iso {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            if t >= t1 {
                return None;
            }
            prev = t;
        }
    }

    fn normal(&self, p: Vec3) -> Vec3 {
        let [hx, hy, hz] = self.voxel;
        let d = |o: Vec3| self.v.sample(p + o) - self.v.sample(p - o);
        let grad = Vec3::new(
            d(Vec3::new(hx, 0.0, 0.0)) / (2.0 * hx),
            d(Vec3::new(0.0, hy, 0.0)) / (2.0 * hy),
            d(Vec3::new(0.0, 0.0, hz)) / (2.0 * hz),
        );
        let to_eye = -self.frame.w;
        match (-grad).normalized() {
            Some(n) if n.dot(to_eye) >= 0.0 => n,
            Some(n) => -n,
            None => to_eye,
        }
    }

    fn shade(&self, p: Vec3) -> f64 {
        let n = self.normal(p);
        let ambient = self.cfg.env_light.radiance(n.dot(self.frame.v)) * self.occlusion(p, n);
        let diffuse = n.dot(self.light).max(0.0);
        let specular = if diffuse > 0.0 {
            math::powf(n.dot(self.half).max(0.0), self.cfg.specular_exponent)
        } else {
            0.0
        };
        (AMBIENT * ambient + DIFFUSE * diffuse + SPECULAR * specular).clamp(0.0, 1.0)
    }

    /// Fraction of cosine-weighted short rays that stay below the iso value.
    fn occlusion(&self, p: Vec3, n: Vec3) -> f64 {
        if self.ao_dirs.is_empty() {
            return 1.0;
        }
        let (t1, t2) = tangent_basis(n);
        let offset = 1.5 * self.voxel.iter().copied().fold(0.0, f64::max);
        let start = p + n * offset;
        let iso = self.cfg.iso_value;
        let open = self
            .ao_dirs
            .iter()
            .filter(|d| {
                let dir = t1 * d.x + t2 * d.y + n * d.z;
                (1..=AO_STEPS).all(|s| {
                    let q = start + dir * (self.cfg.ao_radius * s as f64 / AO_STEPS as f64);
                    self.v.sample(q) < iso
                })
            })
            .count();
        open as f64 / self.ao_dirs.len() as f64
    }
}

fn tangent_basis(n: Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let t1 = n.cross(a).normalized().unwrap_or(Vec3::Y);
    (t1, n.cross(t1))
}

/// Cosine-weighted hemisphere directions (z up) from a Hammersley set.
fn hammersley_cosine(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let u1 = (i as f64 + 0.5) / n as f64;
            let u2 = radical_inverse(i as u32);
            let r = math::sqrt(u1);
            let phi = 2.0 * core::f64::consts::PI * u2;
            Vec3::new(r * math::cos(phi), r * math::sin(phi), math::sqrt((1.0 - u1).max(0.0)))
        })
        .collect()
}

fn radical_inverse(i: u32) -> f64 {
    i.reverse_bits() as f64 / 4_294_967_296.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(res: usize) -> RenderConfig {
        RenderConfig::default().with_resolution(res, res)
    }

    #[test]
    fn empty_volume_is_background() {
        let r = render_iso(&Volume::zeros([8, 8, 8]).unwrap(), &small(16)).unwrap();
        assert!(r.image.data().iter().all(|&p| p == 0.0));
        assert_eq!(r.hit_count(), 0);
    }

    #[test]
    fn solid_cube_is_hit_at_the_entry_face() {
        let v = Volume::new([4, 4, 4], vec![1.0; 64]).unwrap();
        let r = render_iso(&v, &small(8)).unwrap();
        assert_eq!(r.hit_count(), 64);
        assert!(r.depth.iter().all(|&d| d.abs() < 1e-9));
        assert!(r.image.data().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn whole_cube_clip_is_background() {
        let v = Volume::new([4, 4, 4], vec![1.0; 64]).unwrap();
        let cfg = RenderConfig {
            clip_box: Some(ClipBox::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap()),
            ..small(8)
        };
        assert_eq!(render_cutaway(&v, &cfg).unwrap().hit_count(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(RenderConfig { iso_value: 0.0, ..small(4) }.validate().is_err());
        assert!(RenderConfig { iso_value: 1.0, ..small(4) }.validate().is_err());
        assert!(small(0).validate().is_err());
        assert!(ClipBox::new(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.4, 1.0, 1.0)).is_err());
        assert!(ClipBox::new(Vec3::new(-0.1, 0.0, 0.0), Vec3::new(0.4, 1.0, 1.0)).is_err());
    }

    #[test]
    fn hammersley_directions_are_unit_upper_hemisphere() {
        for d in hammersley_cosine(16) {
            assert!((d.norm() - 1.0).abs() < 1e-12 && d.z > 0.0);
        }
    }
}
