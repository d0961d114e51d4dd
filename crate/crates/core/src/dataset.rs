//! Procedural skull-like phantoms, view sampling and species-level splits.
//!
//! A phantom is a closed ellipsoidal shell around low-density tissue, carved
//! by cavities, braced by thin dense plates and extended by capsule-shaped
//! protrusions. Everything lies inside a centred ball so any view rotation
//! keeps the object in the cube, and a border of at least two voxels is
//! exactly zero.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::{Vec3, ViewPose, CENTER};
use crate::image::XRayImage;
use crate::math;
use crate::projector::{project, ProjectorConfig};
use crate::volume::{resample_gaussian, rotate_to_view, Volume};

/// Ellipsoid in a rotated frame, used for the skull body and the cavities.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: Vec3,
    radii: Vec3,
    /// Rotation about the z axis, as (cos, sin).
    yaw: (f64, f64),
}

impl Ellipsoid {
    /// Approximate signed distance, negative inside.
    fn sdf(&self, p: Vec3) -> f64 {
        let d = p - self.center;
        let (c, s) = self.yaw;
        let q = Vec3::new((c * d.x + s * d.y) / self.radii.x, (-s * d.x + c * d.y) / self.radii.y, d.z / self.radii.z);
        let r_min = self.radii.x.min(self.radii.y).min(self.radii.z);
        (q.norm() - 1.0) * r_min
    }

    fn shrunk(&self, by: f64) -> Ellipsoid {
        let r = self.radii;
        Ellipsoid { radii: Vec3::new(r.x - by, r.y - by, r.z - by), ..*self }
    }
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
    density: f64,
}

impl Capsule {
    fn sdf(&self, p: Vec3) -> f64 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        (p - (self.a + ab * t)).norm() - self.radius
    }
}

#[derive(Debug, Clone, Copy)]
struct Plate {
    normal: Vec3,
    offset: f64,
    half_thickness: f64,
}

#[derive(Debug, Clone)]
struct PhantomShape {
    body: Ellipsoid,
    inner: Ellipsoid,
    shell_density: f64,
    tissue_density: f64,
    cavities: Vec<Ellipsoid>,
    plates: Vec<Plate>,
    lattice_density: f64,
    protrusions: Vec<Capsule>,
}

/// Radius of the ball that contains every phantom, before border scaling.
const OBJECT_RADIUS: f64 = 0.45;

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

impl PhantomShape {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle = rng.random_range(-0.35..0.35f64);
        let yaw = (math::cos(angle), math::sin(angle));
        let radii = Vec3::new(rng.random_range(0.22..0.34), rng.random_range(0.20..0.32), rng.random_range(0.20..0.32));
        let offset = Vec3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
        let body = Ellipsoid { center: CENTER + offset, radii, yaw };
        let thickness = rng.random_range(0.025..0.05);
        let inner = body.shrunk(thickness);

        let n_cav = rng.random_range(1..=4);
        let cavities = (0..n_cav)
            .map(|_| {
                let dir = random_unit(&mut rng);
                let reach = rng.random_range(0.0..0.75);
                let center = body.center
                    + Vec3::new(dir.x * radii.x * reach, dir.y * radii.y * reach, dir.z * radii.z * reach);
                let cr = Vec3::new(rng.random_range(0.05..0.13), rng.random_range(0.05..0.13), rng.random_range(0.05..0.13));
                Ellipsoid { center, radii: cr, yaw }
            })
            .collect();

        let n_plates = rng.random_range(2..=5);
        let plates = (0..n_plates)
            .map(|_| {
                let normal = random_unit(&mut rng);
                let offset = normal.dot(body.center) + rng.random_range(-0.12..0.12);
                Plate { normal, offset, half_thickness: rng.random_range(0.006..0.011) }
            })
            .collect();

        let n_prot = rng.random_range(2..=6);
        let protrusions = (0..n_prot)
            .map(|_| {
                let dir = random_unit(&mut rng);
                let a = body.center + Vec3::new(dir.x * radii.x, dir.y * radii.y, dir.z * radii.z) * 0.9;
                let out = (dir + random_unit(&mut rng) * 0.5).normalized().unwrap_or(dir);
                let b = a + out * rng.random_range(0.06..0.18);
                Capsule { a, b, radius: rng.random_range(0.018..0.045), density: rng.random_range(0.5..0.9) }
            })
            .collect();

        Self {
            body,
            inner,
            shell_density: rng.random_range(0.6..0.9),
            tissue_density: rng.random_range(0.06..0.18),
            cavities,
            plates,
            lattice_density: rng.random_range(0.75..1.0),
            protrusions,
        }
    }

    /// Density at a point of the unscaled object space; `h` is the edge width.
    fn density(&self, p: Vec3, h: f64) -> f64 {
        let ramp = |sd: f64| (0.5 - sd / h).clamp(0.0, 1.0);
        let inside = ramp(self.body.sdf(p));
        let interior = ramp(self.inner.sdf(p));
        let mut d = (inside - interior).max(0.0) * self.shell_density + interior * self.tissue_density;
        if interior > 0.0 {
            let plate = self
                .plates
                .iter()
                .map(|pl| ramp((p.dot(pl.normal) - pl.offset).abs() - pl.half_thickness))
                .fold(0.0, f64::max);
            d = d.max(plate * interior * self.lattice_density);
        }
        let cavity = self.cavities.iter().map(|c| ramp(c.sdf(p))).fold(0.0, f64::max);
        d *= 1.0 - cavity;
        for c in &self.protrusions {
            d = d.max(ramp(c.sdf(p)) * c.density);
        }
        d
    }
}

/// Deterministic skull-like phantom. Requires every dimension to be at least 8.
pub fn generate_phantom(seed: u64, dims: [usize; 3]) -> Result<Volume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(invalid!("phantom dims {dims:?} must be at least 8 per axis"));
    }
    let shape = PhantomShape::random(seed);
    let n_min = *dims.iter().min().expect("three dims") as f64;
    // Shrink the object so the zero border is at least two voxels wide.
    let limit = (0.5 - 2.5 / n_min).min(OBJECT_RADIUS);
    let scale = limit / OBJECT_RADIUS;
    let h = 1.0 / (n_min * scale);
    Volume::from_fn(dims, |x, y, z| {
        if [x, y, z].iter().zip(&dims).any(|(&i, &n)| i < 2 || i + 2 >= n) {
            return 0.0;
        }
        let p = Vec3::new(
            (x as f64 + 0.5) / dims[0] as f64,
            (y as f64 + 0.5) / dims[1] as f64,
            (z as f64 + 0.5) / dims[2] as f64,
        );
        let q = CENTER + (p - CENTER) * (1.0 / scale);
        if (q - CENTER).norm() > OBJECT_RADIUS {
            return 0.0;
        }
        shape.density(q, h)
    })
}

/// Direction drawn uniformly (in solid angle) from the `z >= 0` hemisphere.
pub fn sample_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random();
    let phi = rng.random::<f64>() * core::f64::consts::TAU;
    let r = math::sqrt((1.0 - z * z).max(0.0));
    Vec3::new(r * math::cos(phi), r * math::sin(phi), z)
}

/// Yields view poses in pairs: a fresh direction, then the same direction
/// mirrored.
#[derive(Debug, Clone)]
pub struct ViewSampler {
    rng: ChaCha8Rng,
    pending: Option<Vec3>,
}

impl ViewSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), pending: None }
    }

    pub fn sample(&mut self) -> ViewPose {
        let (dir, mirrored) = match self.pending.take() {
            Some(dir) => (dir, true),
            None => {
                let dir = sample_direction(&mut self.rng);
                self.pending = Some(dir);
                (dir, false)
            }
        };
        ViewPose::from_direction(dir, mirrored).expect("sampled directions are unit and in the upper hemisphere")
    }
}

impl Iterator for ViewSampler {
    type Item = ViewPose;

    fn next(&mut self) -> Option<ViewPose> {
        Some(self.sample())
    }
}

/// SplitMix64 finalizer; derives independent seeds from a base seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default fraction of species held out for validation (about 20 of 175).
pub const VALIDATION_FRACTION: f64 = 0.11;

/// Picks which species are held out: `round(n * fraction)`, at least one
/// when there are two or more species and never all of them.
pub fn validation_species(n_species: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let n_val = if n_species < 2 {
        0
    } else {
        (math::round(n_species as f64 * fraction) as usize).clamp(1, n_species - 1)
    };
    let mut order: Vec<usize> = (0..n_species).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED)));
    let mut held = alloc::vec![false; n_species];
    for &i in &order[..n_val] {
        held[i] = true;
    }
    held
}

/// Sizes and seeds of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub species: usize,
    pub views: usize,
    /// Square x-ray size.
    pub image_size: usize,
    /// Cubic size of the stored view-aligned volumes.
    pub volume_size: usize,
    /// Cubic size at which phantoms are generated and rotated.
    pub phantom_size: usize,
    pub chi: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for DatasetConfig {
    /// The desk-scale dataset: 40 species x 50 views, 64x64 x-rays, 32^3
    /// volumes.
    fn default() -> Self {
        Self {
            species: 40,
            views: 50,
            image_size: 64,
            volume_size: 32,
            phantom_size: 64,
            chi: 10.0,
            n_steps: 128,
            seed: 0,
            validation_fraction: VALIDATION_FRACTION,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.species == 0 || self.views == 0 {
            return Err(invalid!("a dataset needs at least one species and one view"));
        }
        if self.volume_size < 8 || self.phantom_size < 8 || self.image_size == 0 {
            return Err(invalid!("volume and phantom sizes must be at least 8, image size positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid!("validation fraction must lie in [0,1)"));
        }
        self.projector().validate()
    }

    pub fn projector(&self) -> ProjectorConfig {
        ProjectorConfig { chi: self.chi, n_steps: self.n_steps, width: self.image_size, height: self.image_size }
    }

    pub fn species_seed(&self, species: usize) -> u64 {
        mix_seed(self.seed, 2 * species as u64 + 1)
    }

    pub fn view_seed(&self, species: usize) -> u64 {
        mix_seed(self.seed, 2 * species as u64 + 2)
    }

    pub fn phantom(&self, species: usize) -> Result<Volume> {
        generate_phantom(self.species_seed(species), [self.phantom_size; 3])
    }

    /// The `views` poses of one species, in pairs of plain and mirrored.
    pub fn poses(&self, species: usize) -> Vec<ViewPose> {
        ViewSampler::new(self.view_seed(species)).take(self.views).collect()
    }
}

/// Phantom rotated into the view frame (at phantom resolution, or deeper
/// when `dims` asks for more slices) and Gaussian-resampled to `dims`.
pub fn view_aligned_volume(phantom: &Volume, pose: &ViewPose, dims: [usize; 3]) -> Result<Volume> {
    let p = phantom.dims();
    let rotated = rotate_to_view(phantom, pose, [p[0].max(dims[0]), p[1].max(dims[1]), p[2].max(dims[2])])?;
    resample_gaussian(&rotated, dims)
}

/// One training pair: the view-aligned volume and the x-ray of that volume
/// seen along its own +z axis, so the pair is exactly consistent.
pub fn synthesize_sample(phantom: &Volume, pose: &ViewPose, cfg: &DatasetConfig) -> Result<(XRayImage, Volume)> {
    let volume = view_aligned_volume(phantom, pose, [cfg.volume_size; 3])?;
    let image = project(&volume, &ViewPose::identity(), &cfg.projector())?;
    Ok((image, volume))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic() {
        let a = generate_phantom(7, [16, 16, 16]).unwrap();
        let b = generate_phantom(7, [16, 16, 16]).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate_phantom(8, [16, 16, 16]).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn phantom_has_zero_border_and_density() {
        for (seed, dims) in [(0, [8, 8, 8]), (1, [12, 9, 16]), (2, [32, 32, 32])] {
            let v = generate_phantom(seed, dims).unwrap();
            assert!(v.data().iter().any(|&d| d > 0.0));
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let border = [x, y, z].iter().zip(&dims).any(|(&i, &n)| i < 2 || i + 2 >= n);
                        if border {
                            assert_eq!(v.get(x, y, z), 0.0);
                        }
                    }
                }
            }
        }
        assert!(generate_phantom(0, [7, 8, 8]).is_err());
    }

    #[test]
    fn sampler_pairs_mirrors() {
        let poses: Vec<ViewPose> = ViewSampler::new(3).take(10).collect();
        for pair in poses.chunks(2) {
            assert_eq!(pair[0].direction(), pair[1].direction());
            assert!(!pair[0].mirrored() && pair[1].mirrored());
        }
    }

    #[test]
    fn split_counts() {
        let held = validation_species(40, VALIDATION_FRACTION, 1);
        assert_eq!(held.iter().filter(|&&h| h).count(), 4);
        assert_eq!(validation_species(10, VALIDATION_FRACTION, 1).iter().filter(|&&h| h).count(), 1);
        assert_eq!(validation_species(1, VALIDATION_FRACTION, 1), alloc::vec![false]);
        assert_eq!(validation_species(2, 0.9, 1).iter().filter(|&&h| h).count(), 1);
    }
}
