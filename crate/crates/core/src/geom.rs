//! Pose and plane primitives.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerance::{PLANE_NORMAL_TOL, ROTATION_ORTHONORMAL_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("plane normal has zero length")]
    ZeroNormal,
    #[error("plane normal is not unit length (|n| = {0})")]
    NonUnitNormal(f64),
    #[error("rotation is not orthonormal with positive determinant")]
    InvalidRotation,
}

/// Oriented plane. Signed distance is positive on the side the normal points to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlaneRepr", into = "PlaneRepr")]
pub struct Plane {
    point: Point3<f64>,
    normal: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlaneRepr {
    point_mm: [f64; 3],
    normal: [f64; 3],
}

impl TryFrom<PlaneRepr> for Plane {
    type Error = GeomError;

    fn try_from(r: PlaneRepr) -> Result<Self, GeomError> {
        Plane::new(Point3::from(r.point_mm), Vector3::from(r.normal))
    }
}

impl From<Plane> for PlaneRepr {
    fn from(p: Plane) -> Self {
        PlaneRepr {
            point_mm: p.point.coords.into(),
            normal: p.normal.into(),
        }
    }
}

impl Plane {
    /// Builds a plane, normalising `normal`.
    pub fn new(point: Point3<f64>, normal: Vector3<f64>) -> Result<Self, GeomError> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(GeomError::ZeroNormal);
        }
        Ok(Plane {
            point,
            normal: normal / len,
        })
    }

    /// Builds a plane from a normal that must already be unit length.
    pub fn from_unit(point: Point3<f64>, normal: Vector3<f64>) -> Result<Self, GeomError> {
        let len = normal.norm();
        if (len - 1.0).abs() > PLANE_NORMAL_TOL {
            return Err(GeomError::NonUnitNormal(len));
        }
        Ok(Plane { point, normal })
    }

    pub fn point(&self) -> Point3<f64> {
        self.point
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    pub fn reflect_point(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    pub fn project_point(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Same plane with the normal reversed.
    pub fn flipped(&self) -> Plane {
        Plane {
            point: self.point,
            normal: -self.normal,
        }
    }

    /// Plane shifted along its normal by `d`.
    pub fn offset(&self, d: f64) -> Plane {
        Plane {
            point: self.point + self.normal * d,
            normal: self.normal,
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Plane {
        Plane {
            point: t.apply_point(&self.point),
            normal: t.apply_vector(&self.normal).normalize(),
        }
    }

    /// Two unit vectors spanning the plane, right-handed with the normal.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        orthonormal_basis(&self.normal)
    }
}

/// Returns `(u, v)` with `u × v = n` for a unit `n`.
pub fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = helper.cross(n).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Proper rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let t = RigidTransform {
            rotation,
            translation,
        };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(GeomError::InvalidRotation)
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the line through `origin` along `axis`.
    pub fn about_axis(origin: &Point3<f64>, axis: &Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner();
        RigidTransform {
            rotation: r,
            translation: origin.coords - r * origin.coords,
        }
    }

    pub fn is_valid(&self) -> bool {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.amax() < ROTATION_ORTHONORMAL_TOL
            && self.rotation.determinant() > 0.0
            && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Projects the rotation onto SO(3) (nearest rotation in Frobenius norm).
    pub fn reorthonormalized(&self) -> RigidTransform {
        RigidTransform {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Nearest proper rotation to `m` via SVD.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Aabb::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        !(self.min.x <= self.max.x && self.min.y <= self.max.y && self.min.z <= self.max.z)
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn intersection(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.sup(&o.min),
            max: self.max.inf(&o.max),
        }
    }

    pub fn inflated(&self, d: f64) -> Aabb {
        let v = Vector3::repeat(d);
        Aabb {
            min: self.min - v,
            max: self.max + v,
        }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            let e = self.extent();
            e.x * e.y * e.z
        }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let mut out = [self.min; 8];
        for (c, o) in out.iter_mut().enumerate() {
            *o = Point3::new(
                if c & 1 == 0 { self.min.x } else { self.max.x },
                if c & 2 == 0 { self.min.y } else { self.max.y },
                if c & 4 == 0 { self.min.z } else { self.max.z },
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn reflect_across_x0() {
        let p = Plane::new(Point3::origin(), Vector3::x()).unwrap();
        let r = p.reflect_point(&Point3::new(1.0, 2.0, 3.0));
        assert_eq!(r, Point3::new(-1.0, 2.0, 3.0));
    }

    #[test]
    fn plane_rejects_zero_normal() {
        assert_eq!(
            Plane::new(Point3::origin(), Vector3::zeros()),
            Err(GeomError::ZeroNormal)
        );
        assert!(Plane::from_unit(Point3::origin(), Vector3::new(0.0, 2.0, 0.0)).is_err());
    }

    #[test]
    fn compose_and_inverse() {
        let a = RigidTransform::about_axis(&Point3::new(1.0, 0.0, 0.0), &Vector3::z(), FRAC_PI_2);
        let b = RigidTransform::translation(Vector3::new(0.0, 2.0, -1.0));
        let c = a.compose(&b);
        let p = Point3::new(0.3, -0.7, 2.0);
        let q = c.apply_point(&p);
        assert!((a.apply_point(&b.apply_point(&p)) - q).norm() < 1e-12);
        assert!((c.inverse().apply_point(&q) - p).norm() < 1e-12);
        assert!(c.is_valid());
        assert!((a.rotation_angle() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn reflection_matrix_is_not_a_rigid_transform() {
        let m = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        assert!((nearest_rotation(&(m * 1.0001)).determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plane_serde_uses_unit_suffixed_keys() {
        let p = Plane::new(Point3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"point_mm":[1.0,2.0,3.0],"normal":[0.0,0.0,1.0]}"#);
        let back: Plane = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Plane>(r#"{"point_mm":[0,0,0],"normal":[0,0,0]}"#).is_err());
    }
}
