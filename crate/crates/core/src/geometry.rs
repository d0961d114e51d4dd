//! Vectors, view poses and the orthonormal frames derived from them.

use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{invalid, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.dot(self))
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-12 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Orthographic view direction on the `z >= 0` hemisphere plus mirror flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPose {
    direction: Vec3,
    up_hint: Vec3,
    mirrored: bool,
}

impl ViewPose {
    /// Validates that `direction` is unit length (1e-6) with `z >= 0`.
    pub fn new(direction: Vec3, up_hint: Vec3, mirrored: bool) -> Result<Self> {
        if !direction.is_finite() || (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(invalid!("view direction {direction:?} is not unit length"));
        }
        if direction.z < 0.0 {
            return Err(invalid!("view direction {direction:?} is outside the z >= 0 hemisphere"));
        }
        let up_hint = up_hint
            .normalized()
            .ok_or_else(|| invalid!("up hint {up_hint:?} has zero length"))?;
        Ok(Self { direction, up_hint, mirrored })
    }

    /// Pose with the dataset's fixed up convention: world +y, or world +z when
    /// the direction is within ~8 degrees of the y axis.
    pub fn from_direction(direction: Vec3, mirrored: bool) -> Result<Self> {
        Self::new(direction, default_up(direction), mirrored)
    }

    /// Looking down +z with the identity in-plane frame.
    pub fn identity() -> Self {
        Self { direction: Vec3::Z, up_hint: Vec3::Y, mirrored: false }
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn up_hint(&self) -> Vec3 {
        self.up_hint
    }

    pub fn mirrored(&self) -> bool {
        self.mirrored
    }

    pub fn frame(&self) -> Result<ViewFrame> {
        ViewFrame::new(self.direction, self.up_hint, self.mirrored)
    }
}

pub(crate) fn default_up(direction: Vec3) -> Vec3 {
    if direction.y.abs() > 0.99 {
        Vec3::Z
    } else {
        Vec3::Y
    }
}

/// Orthonormal view frame: `u`, `v` span the image plane (columns, rows) and
/// `w` is the ray direction. Unlike [`ViewPose`], any direction is allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFrame {
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

impl ViewFrame {
    /// `w = direction`, `u = normalize(up x w)`, `v = w x u`; mirroring flips `u`.
    pub fn new(direction: Vec3, up_hint: Vec3, mirrored: bool) -> Result<Self> {
        let w = direction
            .normalized()
            .ok_or_else(|| invalid!("direction {direction:?} has zero length"))?;
        let u = up_hint.cross(w);
        if u.norm() < 1e-6 {
            return Err(invalid!("up hint {up_hint:?} is parallel to direction {direction:?}"));
        }
        let u = u * (1.0 / u.norm());
        let v = w.cross(u);
        let u = if mirrored { -u } else { u };
        Ok(Self { u, v, w })
    }

    pub fn identity() -> Self {
        Self { u: Vec3::X, v: Vec3::Y, w: Vec3::Z }
    }

    /// Rotates the viewing direction by `angle` radians about the frame's
    /// vertical (`v`) axis; positive angles turn `w` towards `u`.
    pub fn rotated_about_vertical(&self, angle: f64) -> Self {
        let (s, c) = (math::sin(angle), math::cos(angle));
        Self {
            u: self.u * c - self.w * s,
            v: self.v,
            w: self.w * c + self.u * s,
        }
    }

    /// Maps view-local coordinates in `[0,1]^3` to world coordinates. Both
    /// cubes share their center.
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        CENTER
            + self.u * (local.x - 0.5)
            + self.v * (local.y - 0.5)
            + self.w * (local.z - 0.5)
    }

    pub fn to_local(&self, world: Vec3) -> Vec3 {
        let d = world - CENTER;
        Vec3::new(d.dot(self.u) + 0.5, d.dot(self.v) + 0.5, d.dot(self.w) + 0.5)
    }
}

pub(crate) const CENTER: Vec3 = Vec3::new(0.5, 0.5, 0.5);

/// Parametric interval `[t0, t1]` where `origin + t * dir` lies inside the
/// unit cube, if the line hits it with positive length.
pub(crate) fn unit_cube_span(origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d) in [(origin.x, dir.x), (origin.y, dir.y), (origin.z, dir.z)] {
        if d.abs() < 1e-15 {
            if !(0.0..=1.0).contains(&o) {
                return None;
            }
        } else {
            let a = (0.0 - o) / d;
            let b = (1.0 - o) / d;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    (t1 > t0).then_some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn identity_pose_builds_identity_frame() {
        let f = ViewPose::identity().frame().unwrap();
        assert!(close(f.u, Vec3::X) && close(f.v, Vec3::Y) && close(f.w, Vec3::Z));
    }

    #[test]
    fn rejects_bad_poses() {
        assert!(ViewPose::new(Vec3::new(0.0, 0.0, -1.0), Vec3::Y, false).is_err());
        assert!(ViewPose::new(Vec3::new(0.0, 0.0, 2.0), Vec3::Y, false).is_err());
        let parallel = ViewPose::new(Vec3::Z, Vec3::Z, false).unwrap();
        assert!(parallel.frame().is_err());
    }

    #[test]
    fn mirror_flips_u_only() {
        let d = Vec3::new(0.3, 0.4, 0.0).normalized().unwrap();
        let d = (d + Vec3::Z).normalized().unwrap();
        let a = ViewPose::from_direction(d, false).unwrap().frame().unwrap();
        let b = ViewPose::from_direction(d, true).unwrap().frame().unwrap();
        assert!(close(a.u, -b.u) && close(a.v, b.v) && close(a.w, b.w));
    }

    #[test]
    fn local_world_round_trip() {
        let d = Vec3::new(1.0, 2.0, 3.0).normalized().unwrap();
        let f = ViewFrame::new(d, Vec3::Y, true).unwrap();
        let p = Vec3::new(0.1, 0.7, 0.35);
        assert!(close(f.to_local(f.to_world(p)), p));
        assert!(close(f.to_world(Vec3::new(0.5, 0.5, 0.5)), CENTER));
    }

    #[test]
    fn cube_span_axis_aligned() {
        let (t0, t1) = unit_cube_span(Vec3::new(0.5, 0.5, -1.0), Vec3::Z).unwrap();
        assert!((t0 - 1.0).abs() < 1e-12 && (t1 - 2.0).abs() < 1e-12);
        assert!(unit_cube_span(Vec3::new(2.0, 0.5, 0.0), Vec3::Z).is_none());
    }
}
