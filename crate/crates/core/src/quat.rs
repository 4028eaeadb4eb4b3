//! Unit quaternions, rotation matrices and the distances between them.
//!
//! Quaternions are stored as `(w, x, y, z)` with `w` the scalar part and use
//! the Hamilton product, so `to_rotation_matrix(a * b) = R(a) R(b)`. A unit
//! quaternion and its negation describe the same rotation; every rotation-level
//! comparison here is sign invariant.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng::{normal, uniform};
use crate::{Error, Result};

/// Accepted deviation of `|q|` from one when constructing from raw values.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Accepts `(w, x, y, z)` as given when its norm is within
    /// [`UNIT_TOLERANCE`] of one; never renormalizes.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Self { w, x, y, z };
        let n = q.as_vector().norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!("quaternion norm {n} is not 1")));
        }
        Ok(q)
    }

    /// Scales a nonzero 4-vector onto the unit sphere.
    pub fn normalize(v: &Vector4<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self::from_raw(v / n))
    }

    pub(crate) fn from_raw(v: Vector4<f64>) -> Self {
        Self { w: v[0], x: v[1], y: v[2], z: v[3] }
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidArgument("axis must be nonzero and angle finite".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n;
        Ok(Self { w: c, x: s * a[0], y: s * a[1], z: s * a[2] })
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.as_vector().dot(&other.as_vector())
    }

    /// Multiplies by a sign; `sign` must be `+1` or `-1`.
    pub fn signed(&self, sign: i8) -> Self {
        if sign < 0 {
            -*self
        } else {
            *self
        }
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.as_array()
    }
}

impl Neg for UnitQuaternion {
    type Output = Self;
    fn neg(self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }
}

impl Mul for UnitQuaternion {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        multiply(&self, &rhs)
    }
}

/// Hamilton product `a * b`.
pub fn multiply(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    }
}

/// The matrix `Q` with `Q q = q * (sign m)` for every quaternion `q`.
pub fn right_mult_matrix(m: &UnitQuaternion, sign: i8) -> Result<Matrix4<f64>> {
    let s = match sign {
        1 => 1.0,
        -1 => -1.0,
        _ => return Err(Error::InvalidArgument(format!("sign must be +1 or -1, got {sign}"))),
    };
    let (w, x, y, z) = (m.w, m.x, m.y, m.z);
    #[rustfmt::skip]
    let q = Matrix4::new(
        w, -x, -y, -z,
        x,  w,  z, -y,
        y, -z,  w,  x,
        z,  y, -x,  w,
    );
    Ok(q * s)
}

/// `min(|a - b|, |a + b|)`, which equals `2 sin(theta / 4)` for the geodesic
/// angle `theta` between the rotations.
pub fn quaternion_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let (va, vb) = (a.as_vector(), b.as_vector());
    (va - vb).norm().min((va + vb).norm())
}

/// Angle in `[0, pi]` of the relative rotation `conj(a) * b`.
pub fn geodesic_angle(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let r = multiply(&a.conjugate(), b);
    let v = Vector3::new(r.x, r.y, r.z).norm();
    2.0 * v.atan2(r.w.abs())
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Accepts `m` if `m' m = I` and `det m = 1` within `1e-6`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orth = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if !(orth <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: orthogonality error {orth:e}, determinant {det}"
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Frobenius distance `|Ra - Rb|_F = 2 sqrt(2) sin(theta / 2)`.
pub fn chordal_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    (a.0 - b.0).norm()
}

pub fn to_rotation_matrix(q: &UnitQuaternion) -> RotationMatrix {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    #[rustfmt::skip]
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y),
    );
    RotationMatrix(m)
}

/// Inverse of [`to_rotation_matrix`] using the largest diagonal pivot.
/// The result has `w >= 0`; when `w = 0` the first nonzero component is
/// positive.
pub fn from_rotation_matrix(r: &RotationMatrix) -> UnitQuaternion {
    let m = &r.0;
    let tr = m.trace();
    let v = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = 2.0 * (1.0 + tr).sqrt();
        Vector4::new(s / 4.0, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
    } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
        let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
        Vector4::new((m[(2, 1)] - m[(1, 2)]) / s, s / 4.0, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
    } else if m[(1, 1)] >= m[(2, 2)] {
        let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
        Vector4::new((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, s / 4.0, (m[(1, 2)] + m[(2, 1)]) / s)
    } else {
        let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
        Vector4::new((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, s / 4.0)
    };
    let v = v / v.norm();
    let first = v.iter().copied().find(|c| *c != 0.0).unwrap_or(1.0);
    let flip = v[0] < 0.0 || (v[0] == 0.0 && first < 0.0);
    UnitQuaternion::from_raw(if flip { -v } else { v })
}

/// Uniform rotation: four standard normals, normalized.
pub fn random_rotation<R: RngCore + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let v = Vector4::new(normal(rng), normal(rng), normal(rng), normal(rng));
        if v.norm() > 1e-12 {
            return UnitQuaternion::from_raw(v / v.norm());
        }
    }
}

/// `q * r` where `r` rotates about a uniform axis (three normals, normalized)
/// by an angle uniform on `[-theta_max, theta_max]` (one further uniform).
pub fn perturb<R: RngCore + ?Sized>(q: &UnitQuaternion, theta_max: f64, rng: &mut R) -> Result<UnitQuaternion> {
    if !(theta_max >= 0.0 && theta_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta_max must be >= 0, got {theta_max}")));
    }
    let axis = loop {
        let a = Vector3::new(normal(rng), normal(rng), normal(rng));
        if a.norm() > 1e-12 {
            break a / a.norm();
        }
    };
    let angle = theta_max * (2.0 * uniform(rng) - 1.0);
    let (s, c) = (angle / 2.0).sin_cos();
    let r = UnitQuaternion { w: c, x: s * axis[0], y: s * axis[1], z: s * axis[2] };
    Ok(multiply(q, &r))
}
