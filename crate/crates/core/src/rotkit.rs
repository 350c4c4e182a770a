//! Rotation representations and arm forward kinematics.
//!
//! Frame convention: right-handed, Y up, Z forward. Yaw (heading) is a
//! rotation about +Y; a heading of zero faces +Z, and the heading's
//! `(sin, cos)` pair equals the `(x, z)` components of the forward vector.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type RotationMatrix = Matrix3<f64>;

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < DEGENERATE_NORM || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n * s;
        Self::new(c, a.x, a.y, a.z)
    }

    /// Rotation whose axis is `v` and whose angle is `|v|`.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateInput("zero quaternion"));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Inverse of a unit quaternion.
    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(&self, rhs: &Quaternion) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = *self;
        RotationMatrix::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Shepperd's method; picks the numerically largest pivot.
    pub fn from_rotation_matrix(m: &RotationMatrix) -> Self {
        let tr = m.trace();
        let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().unwrap_or(Self::IDENTITY)
    }
}

/// Continuous six-dimensional rotation representation: the first two columns
/// of a rotation matrix, not necessarily orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixDRR {
    pub a1: Vec3,
    pub a2: Vec3,
}

impl SixDRR {
    pub const IDENTITY: SixDRR = SixDRR {
        a1: Vector3::new(1.0, 0.0, 0.0),
        a2: Vector3::new(0.0, 1.0, 0.0),
    };

    pub fn new(a1: Vec3, a2: Vec3) -> Self {
        Self { a1, a2 }
    }

    pub fn from_rotation_matrix(m: &RotationMatrix) -> Self {
        Self::new(m.column(0).into_owned(), m.column(1).into_owned())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z,
        ]
    }

    /// Gram–Schmidt decode to a proper rotation matrix.
    pub fn to_rotation_matrix(&self) -> Result<RotationMatrix> {
        sixdrr_to_rotmat(self)
    }

    /// Left-multiplies both columns by `r` (a change of world frame).
    pub fn rotated(&self, r: &RotationMatrix) -> Self {
        Self::new(r * self.a1, r * self.a2)
    }
}

pub fn quat_to_6drr(q: &Quaternion) -> SixDRR {
    SixDRR::from_rotation_matrix(&q.to_rotation_matrix())
}

pub fn sixdrr_to_rotmat(r: &SixDRR) -> Result<RotationMatrix> {
    let n1 = r.a1.norm();
    let n2 = r.a2.norm();
    if n1 < DEGENERATE_NORM || n2 < DEGENERATE_NORM {
        return Err(Error::DegenerateInput("zero 6DRR column"));
    }
    let b1 = r.a1 / n1;
    if (b1.dot(&r.a2) / n2).abs() > 1.0 - DEGENERATE_NORM {
        return Err(Error::DegenerateInput("parallel 6DRR columns"));
    }
    let b2 = (r.a2 - b1 * b1.dot(&r.a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix::from_columns(&[b1, b2, b3]))
}

/// Body yaw encoded as `(sin, cos)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heading {
    pub s: f64,
    pub c: f64,
}

impl Heading {
    pub const FORWARD: Heading = Heading { s: 0.0, c: 1.0 };

    pub fn new(s: f64, c: f64) -> Self {
        Self { s, c }
    }

    pub fn from_yaw(yaw: f64) -> Self {
        heading_encode(yaw)
    }

    pub fn yaw(&self) -> Result<f64> {
        heading_decode(self)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.s.hypot(self.c);
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateInput("zero heading"));
        }
        Ok(Self::new(self.s / n, self.c / n))
    }

    /// Adds `angle` to the encoded yaw without decoding it.
    pub fn rotated(&self, angle: f64) -> Self {
        if angle == 0.0 {
            return *self;
        }
        let (sa, ca) = angle.sin_cos();
        Self::new(self.s * ca + self.c * sa, self.c * ca - self.s * sa)
    }
}

pub fn heading_encode(yaw: f64) -> Heading {
    let (s, c) = yaw.sin_cos();
    Heading { s, c }
}

pub fn heading_decode(h: &Heading) -> Result<f64> {
    if h.s.hypot(h.c) < DEGENERATE_NORM {
        return Err(Error::DegenerateInput("zero heading"));
    }
    Ok(h.s.atan2(h.c))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Rotation about the up (+Y) axis.
pub fn yaw_rotation(yaw: f64) -> RotationMatrix {
    let (s, c) = yaw.sin_cos();
    RotationMatrix::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn axis_rotation(axis: &Vec3, angle: f64) -> RotationMatrix {
    Quaternion::from_axis_angle(axis, angle).to_rotation_matrix()
}

/// Rotation vector (axis · angle) of a rotation matrix.
pub fn rotation_log(m: &RotationMatrix) -> Vec3 {
    let q = Quaternion::from_rotation_matrix(m);
    // Shortest arc: keep w non-negative.
    let (w, v) = if q.w < 0.0 {
        (-q.w, Vec3::new(-q.x, -q.y, -q.z))
    } else {
        (q.w, Vec3::new(q.x, q.y, q.z))
    };
    let sn = v.norm();
    if sn < 1e-15 {
        return v * 2.0;
    }
    let angle = 2.0 * sn.atan2(w);
    v * (angle / sn)
}

/// Geodesic angle on SO(3).
pub trait Geodesic {
    fn angle_to(&self, other: &Self) -> f64;
}

impl Geodesic for Quaternion {
    fn angle_to(&self, other: &Self) -> f64 {
        let d = self.conjugate().mul(other);
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }
}

impl Geodesic for RotationMatrix {
    fn angle_to(&self, other: &Self) -> f64 {
        let d = self.transpose() * other;
        let sin_vec = Vec3::new(
            d[(2, 1)] - d[(1, 2)],
            d[(0, 2)] - d[(2, 0)],
            d[(1, 0)] - d[(0, 1)],
        ) * 0.5;
        let cos = 0.5 * (d.trace() - 1.0);
        sin_vec.norm().atan2(cos)
    }
}

pub fn angular_distance<R: Geodesic>(a: &R, b: &R) -> f64 {
    a.angle_to(b)
}

/// Limb lengths and rest directions of the shoulder–elbow–wrist chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub upper_arm_len: f64,
    pub lower_arm_len: f64,
    pub shoulder_offset: Vec3,
    pub rest_dir_upper: Vec3,
    pub rest_dir_lower: Vec3,
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            upper_arm_len: 0.30,
            lower_arm_len: 0.28,
            shoulder_offset: Vec3::new(0.0, 0.45, 0.0),
            rest_dir_upper: Vec3::new(0.0, -1.0, 0.0),
            rest_dir_lower: Vec3::new(0.0, 0.0, 1.0),
        }
    }
}

impl BodyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper_arm_len > 0.0 && self.lower_arm_len > 0.0) {
            return Err(Error::Config("limb lengths must be positive".into()));
        }
        for d in [&self.rest_dir_upper, &self.rest_dir_lower] {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config("rest directions must be unit vectors".into()));
            }
        }
        Ok(())
    }

    /// Upper bound on the distance between hip origin and wrist.
    pub fn reach(&self) -> f64 {
        self.shoulder_offset.norm() + self.upper_arm_len + self.lower_arm_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPoints {
    pub elbow: Vec3,
    pub wrist: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// Points in the body-local frame (the frame that turns with the user).
    pub local: ArmPoints,
    /// Points after applying the heading yaw.
    pub world: ArmPoints,
}

/// Forward kinematics of the shoulder–elbow–wrist chain.
///
/// `upper` and `lower` are body-local limb rotations; each acts on its own
/// rest direction independently (they are not chained).
pub fn forward_kinematics(
    upper: &SixDRR,
    lower: &SixDRR,
    heading: &Heading,
    body: &BodyModel,
) -> Result<Kinematics> {
    let r_u = upper.to_rotation_matrix()?;
    let r_l = lower.to_rotation_matrix()?;
    let yaw = heading.yaw()?;
    let elbow = body.shoulder_offset + r_u * body.rest_dir_upper * body.upper_arm_len;
    let wrist = elbow + r_l * body.rest_dir_lower * body.lower_arm_len;
    let local = ArmPoints { elbow, wrist };
    let ry = yaw_rotation(yaw);
    let world = ArmPoints {
        elbow: ry * elbow,
        wrist: ry * wrist,
    };
    Ok(Kinematics { local, world })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_vec(a: &Vec3, b: &Vec3, tol: f64) {
        assert!((a - b).amax() < tol, "{a:?} != {b:?}");
    }

    #[test]
    fn identity_quaternion_to_6drr() {
        let r = quat_to_6drr(&Quaternion::IDENTITY);
        assert_eq!(r.a1, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(r.a2, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_y_to_6drr() {
        let q = Quaternion::from_axis_angle(&Vec3::y(), FRAC_PI_2);
        let r = quat_to_6drr(&q);
        assert_vec(&r.a1, &Vec3::new(0.0, 0.0, -1.0), 1e-12);
        assert_vec(&r.a2, &Vec3::new(0.0, 1.0, 0.0), 1e-12);
    }

    #[test]
    fn gram_schmidt_hand_cases() {
        let m = sixdrr_to_rotmat(&SixDRR::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)))
            .unwrap();
        assert!((m - RotationMatrix::identity()).amax() < 1e-15);
        let m = sixdrr_to_rotmat(&SixDRR::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)))
            .unwrap();
        assert!((m - RotationMatrix::identity()).amax() < 1e-15);
    }

    #[test]
    fn degenerate_6drr_rejected() {
        let zero = SixDRR::new(Vec3::zeros(), Vec3::y());
        assert!(matches!(sixdrr_to_rotmat(&zero), Err(Error::DegenerateInput(_))));
        let parallel = SixDRR::new(Vec3::x(), Vec3::new(-3.0, 0.0, 0.0));
        assert!(matches!(sixdrr_to_rotmat(&parallel), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn heading_round_trip() {
        let h = heading_encode(0.0);
        assert_eq!((h.s, h.c), (0.0, 1.0));
        let h = heading_encode(FRAC_PI_2);
        assert!((h.s - 1.0).abs() < 1e-15 && h.c.abs() < 1e-15);
        assert!((heading_decode(&heading_encode(2.5)).unwrap() - 2.5).abs() < 1e-12);
        assert!(heading_decode(&Heading::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn heading_rotation_matches_encoding() {
        let h = Heading::FORWARD.rotated(FRAC_PI_2);
        assert!((h.s - 1.0).abs() < 1e-15 && h.c.abs() < 1e-15);
        assert_eq!(Heading::new(-0.0, 1.0).rotated(0.0).s.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn heading_faces_along_yaw_rotated_forward() {
        let yaw = 0.7;
        let fwd = yaw_rotation(yaw) * Vec3::z();
        let h = heading_encode(yaw);
        assert!((fwd.x - h.s).abs() < 1e-15 && (fwd.z - h.c).abs() < 1e-15);
    }

    #[test]
    fn fk_rest_pose() {
        let k = forward_kinematics(
            &SixDRR::IDENTITY,
            &SixDRR::IDENTITY,
            &Heading::FORWARD,
            &BodyModel::default(),
        )
        .unwrap();
        assert_vec(&k.local.elbow, &Vec3::new(0.0, 0.15, 0.0), 1e-15);
        assert_vec(&k.local.wrist, &Vec3::new(0.0, 0.15, 0.28), 1e-15);
        assert_eq!(k.local, k.world);
    }

    #[test]
    fn fk_forearm_pitched_up() {
        // Right-handed: -90° about +X carries +Z (forward) onto +Y (up).
        let up = SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::x(), -FRAC_PI_2));
        let k = forward_kinematics(&SixDRR::IDENTITY, &up, &Heading::FORWARD, &BodyModel::default())
            .unwrap();
        assert_vec(&(k.local.wrist - k.local.elbow), &Vec3::new(0.0, 0.28, 0.0), 1e-15);

        let down = SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::x(), FRAC_PI_2));
        let k = forward_kinematics(&SixDRR::IDENTITY, &down, &Heading::FORWARD, &BodyModel::default())
            .unwrap();
        assert_vec(&(k.local.wrist - k.local.elbow), &Vec3::new(0.0, -0.28, 0.0), 1e-15);
    }

    #[test]
    fn fk_heading_only_moves_world_frame() {
        let body = BodyModel::default();
        let q = SixDRR::from_rotation_matrix(&axis_rotation(&Vec3::new(0.3, 1.0, -0.2), 0.8));
        let a = forward_kinematics(&q, &q, &Heading::FORWARD, &body).unwrap();
        let b = forward_kinematics(&q, &q, &heading_encode(PI), &body).unwrap();
        assert_eq!(a.local, b.local);
        assert_vec(&b.world.wrist, &(yaw_rotation(PI) * a.local.wrist), 1e-15);
    }

    #[test]
    fn angular_distance_cases() {
        let q = Quaternion::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 1.1);
        assert!(angular_distance(&q, &q).abs() < 1e-15);
        let neg = Quaternion::new(-q.w, -q.x, -q.y, -q.z);
        assert!(angular_distance(&q, &neg).abs() < 1e-15);
        let rz = Quaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        assert!((angular_distance(&Quaternion::IDENTITY, &rz) - FRAC_PI_2).abs() < 1e-15);
        let m = rz.to_rotation_matrix();
        assert!((angular_distance(&RotationMatrix::identity(), &m) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn rotation_log_inverts_axis_angle() {
        let v = Vec3::new(0.2, -0.4, 0.1);
        let m = Quaternion::from_rotation_vector(&v).to_rotation_matrix();
        assert_vec(&rotation_log(&m), &v, 1e-14);
        assert_eq!(rotation_log(&RotationMatrix::identity()), Vec3::zeros());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn body_model_validation() {
        assert!(BodyModel::default().validate().is_ok());
        let bad = BodyModel {
            lower_arm_len: 0.0,
            ..BodyModel::default()
        };
        assert!(bad.validate().is_err());
    }
}
