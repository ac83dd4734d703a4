//! Small 3D math kit: vectors, unit quaternions, similarity transforms and
//! axis-aligned boxes. World space is metres, right-handed, z up.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v)
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

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    pub fn normalize(self) -> Vec3 {
        self / self.length()
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Two unit vectors completing `self` (assumed unit) to an orthonormal basis.
    pub fn orthonormal_basis(self) -> (Vec3, Vec3) {
        // Duff et al. branchless construction
        let sign = 1f64.copysign(self.z);
        let a = -1.0 / (sign + self.z);
        let b = self.x * self.y * a;
        (
            Vec3::new(1.0 + sign * self.x * self.x * a, sign * b, -sign * self.x),
            Vec3::new(b, sign + self.y * self.y * a, -self.y),
        )
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, k: f64) -> Vec3 {
        Vec3::new(self.x / k, self.y / k, self.z / k)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Quat {
        let len = axis.length();
        if len == 0.0 || angle_rad == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / len;
        let (s, c) = (0.5 * angle_rad).sin_cos();
        Quat {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
    }

    pub fn yaw(angle_rad: f64) -> Quat {
        Quat::from_axis_angle(Vec3::Z, angle_rad)
    }

    /// Returns (unit axis, angle in radians ∈ [0, π]).
    pub fn to_axis_angle(self) -> (Vec3, f64) {
        let q = if self.w < 0.0 { self.neg() } else { self };
        let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if s < 1e-15 {
            return (Vec3::Z, 0.0);
        }
        (Vec3::new(q.x, q.y, q.z) / s, 2.0 * s.atan2(q.w))
    }

    fn neg(self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalize(self) -> Quat {
        let n = self.dot(self).sqrt();
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conjugate(self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn mul(self, o: Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(t)
    }

    /// Shortest-arc spherical linear interpolation.
    pub fn slerp(self, other: Quat, u: f64) -> Quat {
        let mut b = other;
        let mut d = self.dot(other);
        if d < 0.0 {
            b = other.neg();
            d = -d;
        }
        if d > 1.0 - 1e-12 {
            return Quat {
                w: self.w + u * (b.w - self.w),
                x: self.x + u * (b.x - self.x),
                y: self.y + u * (b.y - self.y),
                z: self.z + u * (b.z - self.z),
            }
            .normalize();
        }
        let theta = d.acos();
        let s = theta.sin();
        let wa = ((1.0 - u) * theta).sin() / s;
        let wb = (u * theta).sin() / s;
        Quat {
            w: wa * self.w + wb * b.w,
            x: wa * self.x + wb * b.x,
            y: wa * self.y + wb * b.y,
            z: wa * self.z + wb * b.z,
        }
    }

    /// Rotation matrix rows.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Quat {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat {
                w: 0.25 * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat {
                w: (m[2][1] - m[1][2]) / s,
                x: 0.25 * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: 0.25 * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: 0.25 * s,
            }
        };
        q.normalize()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("matrix is not a similarity transform (shear, non-uniform scale or reflection)")]
    NotDecomposable,
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Translation ∘ rotation ∘ uniform scale: `p ↦ t + R(s·p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub translation: Vec3,
    pub rotation: Quat,
    pub scale: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        translation: Vec3::ZERO,
        rotation: Quat::IDENTITY,
        scale: 1.0,
    };

    pub fn translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::IDENTITY
        }
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.translation + self.rotation.rotate(p * self.scale)
    }

    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate(v * self.scale)
    }

    pub fn apply_normal(&self, n: Vec3) -> Vec3 {
        self.rotation.rotate(n)
    }

    pub fn inverse_point(&self, p: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(p - self.translation) / self.scale
    }

    pub fn inverse_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(v) / self.scale
    }

    /// Row-major 4×4 matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let s = self.scale;
        let t = self.translation;
        [
            [r[0][0] * s, r[0][1] * s, r[0][2] * s, t.x],
            [r[1][0] * s, r[1][1] * s, r[1][2] * s, t.y],
            [r[2][0] * s, r[2][1] * s, r[2][2] * s, t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Decomposes a row-major affine matrix; anything with shear,
    /// non-uniform scale, reflection or projective terms is rejected.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self, TransformError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        let tol = 1e-9;
        if m[3][0].abs() > tol || m[3][1].abs() > tol || m[3][2].abs() > tol || (m[3][3] - 1.0).abs() > tol {
            return Err(TransformError::NotDecomposable);
        }
        let col = |j: usize| Vec3::new(m[0][j], m[1][j], m[2][j]);
        let (c0, c1, c2) = (col(0), col(1), col(2));
        let s = c0.length();
        if s <= 0.0 {
            return Err(TransformError::NotDecomposable);
        }
        let rel = tol * s * s;
        if (c1.length() - s).abs() > tol * s
            || (c2.length() - s).abs() > tol * s
            || c0.dot(c1).abs() > rel
            || c0.dot(c2).abs() > rel
            || c1.dot(c2).abs() > rel
            || c0.cross(c1).dot(c2) <= 0.0
        {
            return Err(TransformError::NotDecomposable);
        }
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[i][j] / s;
            }
        }
        Ok(Self {
            translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
            rotation: Quat::from_matrix(r),
            scale: s,
        })
    }

    /// Linear in translation and scale, slerp in rotation.
    pub fn interpolate(&self, other: &Similarity, u: f64) -> Similarity {
        if u <= 0.0 {
            return *self;
        }
        if u >= 1.0 {
            return *other;
        }
        Similarity {
            translation: self.translation + (other.translation - self.translation) * u,
            rotation: self.rotation.slerp(other.rotation, u),
            scale: self.scale + (other.scale - self.scale) * u,
        }
    }
}

/// Component-wise transform interpolation over the shutter interval.
pub fn interpolate_transform(t0: &Similarity, t1: &Similarity, u: f64) -> Similarity {
    t0.interpolate(t1, u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3 {
            x: f64::INFINITY,
            y: f64::INFINITY,
            z: f64::INFINITY,
        },
        max: Vec3 {
            x: f64::NEG_INFINITY,
            y: f64::NEG_INFINITY,
            z: f64::NEG_INFINITY,
        },
    };

    pub fn from_points<I: IntoIterator<Item = Vec3>>(pts: I) -> Aabb {
        pts.into_iter().fold(Aabb::EMPTY, |b, p| b.grow(p))
    }

    pub fn grow(self, p: Vec3) -> Aabb {
        Aabb {
            min: self.min.min(p),
            max: self.max.max(p),
        }
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Slab test; returns the entry distance when the box is hit within `[0, t_max]`.
    pub fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut tn = (self.min[a] - origin[a]) * inv_dir[a];
            let mut tf = (self.max[a] - origin[a]) * inv_dir[a];
            if tn > tf {
                std::mem::swap(&mut tn, &mut tf);
            }
            // NaN from 0·∞ on a slab boundary must not reject the box
            if tn > t0 {
                t0 = tn;
            }
            if tf < t1 {
                t1 = tf;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn interpolate_endpoints_exact() {
        let a = Similarity {
            translation: Vec3::new(1.0, 2.0, 3.0),
            rotation: Quat::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.3),
            scale: 2.0,
        };
        let b = Similarity {
            translation: Vec3::new(-4.0, 0.5, 1.0),
            rotation: Quat::yaw(1.2),
            scale: 0.5,
        };
        assert_eq!(interpolate_transform(&a, &b, 0.0), a);
        assert_eq!(interpolate_transform(&a, &b, 1.0), b);
    }

    #[test]
    fn interpolate_translation_midpoint() {
        let a = Similarity::IDENTITY;
        let b = Similarity::translation(Vec3::new(2.0, 0.0, 0.0));
        let m = interpolate_transform(&a, &b, 0.5);
        assert_eq!(m.translation, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn interpolate_rotation_slerp_oracle() {
        let a = Similarity::IDENTITY;
        let b = Similarity {
            rotation: Quat::yaw(FRAC_PI_2),
            ..Similarity::IDENTITY
        };
        let m = interpolate_transform(&a, &b, 0.5);
        let (axis, angle) = m.rotation.to_axis_angle();
        assert!((angle - FRAC_PI_2 / 2.0).abs() < 1e-9);
        assert!((axis - Vec3::Z).length() < 1e-9);
        // the rotated x axis should point along 45°
        let v = m.apply_vector(Vec3::X);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v - Vec3::new(s, s, 0.0)).length() < 1e-9);
    }

    #[test]
    fn matrix_round_trip_and_shear_rejection() {
        let t = Similarity {
            translation: Vec3::new(3.0, -1.0, 2.0),
            rotation: Quat::from_axis_angle(Vec3::new(0.2, 0.3, 0.9), 0.7),
            scale: 1.5,
        };
        let back = Similarity::from_matrix(t.to_matrix()).unwrap();
        let p = Vec3::new(0.3, 0.7, -1.1);
        assert!((back.apply_point(p) - t.apply_point(p)).length() < 1e-12);

        let mut shear = Similarity::IDENTITY.to_matrix();
        shear[0][1] = 0.5;
        assert_eq!(Similarity::from_matrix(shear), Err(TransformError::NotDecomposable));
        let mut mirror = Similarity::IDENTITY.to_matrix();
        mirror[2][2] = -1.0;
        assert_eq!(Similarity::from_matrix(mirror), Err(TransformError::NotDecomposable));
    }

    #[test]
    fn inverse_point_undoes_apply() {
        let t = Similarity {
            translation: Vec3::new(1.0, 2.0, 3.0),
            rotation: Quat::from_axis_angle(Vec3::new(1.0, -2.0, 0.5), 2.1),
            scale: 0.7,
        };
        let p = Vec3::new(-3.0, 0.25, 9.0);
        assert!((t.inverse_point(t.apply_point(p)) - p).length() < 1e-12);
    }

    #[test]
    fn orthonormal_basis_is_orthonormal() {
        for d in [Vec3::Z, -Vec3::Z, Vec3::new(0.3, -0.4, 0.1).normalize()] {
            let (a, b) = d.orthonormal_basis();
            assert!(a.dot(b).abs() < 1e-12 && a.dot(d).abs() < 1e-12 && b.dot(d).abs() < 1e-12);
            assert!((a.length() - 1.0).abs() < 1e-12 && (b.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aabb_slab_hit() {
        let b = Aabb {
            min: Vec3::splat(-1.0),
            max: Vec3::splat(1.0),
        };
        let o = Vec3::new(0.0, 0.0, -5.0);
        let d = Vec3::Z;
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        assert_eq!(b.hit(o, inv, f64::INFINITY), Some(4.0));
        assert_eq!(b.hit(o, inv, 3.0), None);
    }
}
