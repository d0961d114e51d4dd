//! Density volumes on the unit cube and their resampling operators.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::{Vec3, ViewFrame, ViewPose};
use crate::math;

/// Scalar density grid covering `[0,1]^3`, stored x-fastest, then y, then z.
/// Every voxel is finite and lies in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(invalid!("volume {dims:?} needs {len} voxels, got {}", data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("voxel {i} has value {} outside [0,1]", data[i]));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] })
    }

    /// Builds a volume from a per-voxel function; values are clamped to `[0,1]`
    /// and non-finite values become 0.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(clamp_unit(f(x, y, z)));
                }
            }
        }
        Ok(Self { dims, data })
    }

    /// Like [`Volume::new`] but clamps values into `[0,1]` instead of failing.
    pub fn from_clamped(dims: [usize; 3], data: impl IntoIterator<Item = f64>) -> Result<Self> {
        check_dims(dims)?;
        let data: Vec<f32> = data.into_iter().map(clamp_unit).collect();
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(invalid!("volume {dims:?} got {} voxels", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Sets a voxel, clamping into `[0,1]`.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = clamp_unit(value);
    }

    /// The densities of the voxel column at `(x, y)`, front (z = 0) to back.
    pub fn column(&self, x: usize, y: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.dims[2]).map(move |z| self.get(x, y, z))
    }

    /// Trilinear density at a point of the unit cube. Inside the cube the
    /// lookup clamps to the edge voxels; outside it reads vacuum (0).
    #[inline]
    pub fn sample(&self, p: Vec3) -> f64 {
        if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) || !(0.0..=1.0).contains(&p.z) {
            return 0.0;
        }
        let (x0, x1, tx) = lerp_index(p.x, self.dims[0]);
        let (y0, y1, ty) = lerp_index(p.y, self.dims[1]);
        let (z0, z1, tz) = lerp_index(p.z, self.dims[2]);
        let g = |x, y, z| self.get(x, y, z) as f64;
        let c00 = g(x0, y0, z0) * (1.0 - tx) + g(x1, y0, z0) * tx;
        let c10 = g(x0, y1, z0) * (1.0 - tx) + g(x1, y1, z0) * tx;
        let c01 = g(x0, y0, z1) * (1.0 - tx) + g(x1, y0, z1) * tx;
        let c11 = g(x0, y1, z1) * (1.0 - tx) + g(x1, y1, z1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }

    /// Largest absolute voxel difference; `None` on a shape mismatch.
    pub fn max_abs_diff(&self, other: &Volume) -> Option<f64> {
        (self.dims == other.dims).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .fold(0.0, f64::max)
        })
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(invalid!("volume dims {dims:?} must all be positive"));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| invalid!("volume dims {dims:?} overflow"))?;
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0) as f32
    }
}

/// Neighbouring sample indices and blend weight for a unit coordinate on a
/// grid of `n` cell-centred samples, clamping at the edges.
#[inline]
pub(crate) fn lerp_index(p: f64, n: usize) -> (usize, usize, f64) {
    let f = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = f as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, f - i0 as f64)
}

/// Normalized Gaussian taps mapping `n_in` cell-centred samples onto `n_out`.
/// Sigma is half of the coarser of the two spacings, truncated at 3 sigma.
/// Equal sizes map to the identity.
pub(crate) fn gaussian_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    if n_in == n_out {
        return (0..n_out).map(|i| vec![(i, 1.0)]).collect();
    }
    let sigma = 0.5 * (1.0 / n_in as f64).max(1.0 / n_out as f64);
    let reach = 3.0 * sigma;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) / n_out as f64;
            let lo = math::floor((center - reach) * n_in as f64 - 0.5).max(0.0) as usize;
            let hi = (math::ceil((center + reach) * n_in as f64 - 0.5) as usize).min(n_in - 1);
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let d = (j as f64 + 0.5) / n_in as f64 - center;
                    (d.abs() <= reach + 1e-12).then(|| (j, math::exp(-d * d / (2.0 * sigma * sigma))))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples one axis of an x-fastest 3D grid with precomputed taps.
fn resample_axis(src: &[f64], dims: [usize; 3], axis: usize, taps: &[Vec<(usize, f64)>]) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = taps.len();
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let out_stride = match axis {
        0 => 1,
        1 => out_dims[0],
        _ => out_dims[0] * out_dims[1],
    };
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    // Iterate over all lines parallel to `axis`.
    let mut others = [0usize; 3];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for ob in 0..dims[b] {
        for oa in 0..dims[a] {
            others[a] = oa;
            others[b] = ob;
            others[axis] = 0;
            let base = (others[2] * dims[1] + others[1]) * dims[0] + others[0];
            let out_base = (others[2] * out_dims[1] + others[1]) * out_dims[0] + others[0];
            for (i, t) in taps.iter().enumerate() {
                out[out_base + i * out_stride] = t.iter().map(|&(j, w)| w * src[base + j * stride]).sum();
            }
        }
    }
    (out, out_dims)
}

/// Gaussian-filtered resampling onto `target` dims over the same unit cube.
pub fn resample_gaussian(src: &Volume, target: [usize; 3]) -> Result<Volume> {
    check_dims(target)?;
    let mut dims = src.dims;
    let mut buf: Vec<f64> = src.data.iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        if dims[axis] != target[axis] {
            let taps = gaussian_taps(dims[axis], target[axis]);
            (buf, dims) = resample_axis(&buf, dims, axis, &taps);
        }
    }
    Volume::from_clamped(target, buf)
}

/// Re-samples `src` into the view frame of `pose`: the output z axis follows
/// the view direction and x/y follow the image axes. Trilinear lookups;
/// points outside the source cube read 0.
pub fn rotate_to_view(src: &Volume, pose: &ViewPose, out_dims: [usize; 3]) -> Result<Volume> {
    rotate_with_frame(src, &pose.frame()?, out_dims)
}

/// [`rotate_to_view`] for an explicit frame.
pub fn rotate_with_frame(src: &Volume, frame: &ViewFrame, out_dims: [usize; 3]) -> Result<Volume> {
    check_dims(out_dims)?;
    let [nx, ny, nz] = out_dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        let lz = (k as f64 + 0.5) / nz as f64;
        for j in 0..ny {
            let ly = (j as f64 + 0.5) / ny as f64;
            let row = frame.to_world(Vec3::new(0.0, ly, lz));
            for i in 0..nx {
                let lx = (i as f64 + 0.5) / nx as f64;
                data.push(src.sample(row + frame.u * lx));
            }
        }
    }
    Volume::from_clamped(out_dims, data)
}

impl ViewFrame {
    /// The frame whose local-to-world map inverts this one's.
    pub fn inverse(&self) -> ViewFrame {
        let (u, v, w) = (self.u, self.v, self.w);
        ViewFrame {
            u: Vec3::new(u.x, v.x, w.x),
            v: Vec3::new(u.y, v.y, w.y),
            w: Vec3::new(u.z, v.z, w.z),
        }
    }
}

/// Band-limits depth to `reduced_nz` slices: Gaussian down-sampling along z
/// followed by linear up-sampling back to the original depth.
pub fn depth_resample_roundtrip(v: &Volume, reduced_nz: usize) -> Result<Volume> {
    let [nx, ny, nz] = v.dims;
    if reduced_nz == 0 || reduced_nz > nz {
        return Err(invalid!("reduced depth {reduced_nz} must be in 1..={nz}"));
    }
    if reduced_nz == nz {
        return Ok(v.clone());
    }
    let down = resample_gaussian(v, [nx, ny, reduced_nz])?;
    Ok(resample_depth_linear(&down, nz))
}

/// Linear interpolation along z onto `nz` slices, x/y untouched.
pub fn resample_depth_linear(v: &Volume, nz: usize) -> Volume {
    let [nx, ny, src_nz] = v.dims;
    let plane = nx * ny;
    let mut data = Vec::with_capacity(plane * nz);
    for k in 0..nz {
        let (z0, z1, t) = lerp_index((k as f64 + 0.5) / nz as f64, src_nz);
        let a = &v.data[z0 * plane..(z0 + 1) * plane];
        let b = &v.data[z1 * plane..(z1 + 1) * plane];
        data.extend(a.iter().zip(b).map(|(&a, &b)| clamp_unit(a as f64 * (1.0 - t) + b as f64 * t)));
    }
    Volume { dims: [nx, ny, nz], data }
}
