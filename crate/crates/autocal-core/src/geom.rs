//! Group algebra for planar similarity transforms and the ground-alignment
//! rigid transform.
//!
//! A [`Sim2`] is an orientation-preserving similarity of the plane
//! (rotation, translation, uniform scale); an SE(2) pose ([`Pose2`]) is the
//! unit-scale special case. The composition and inverse are implemented
//! symbolically (no matrix round trip) because the solvers evaluate them
//! millions of times in Monte Carlo runs.
//!
//! Angles are always stored normalized to the half-open interval
//! `[-pi, pi)`; this convention makes residual tests reproducible
//! bit-for-bit.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into `[-pi, pi)`.
///
/// Panics on non-finite input: angles are produced by trigonometry on
/// validated data, so a NaN here is a programming error upstream.
pub fn normalize_angle(theta: f64) -> f64 {
    assert!(theta.is_finite(), "cannot normalize non-finite angle");
    let wrapped =
        (theta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    // rem_euclid can land exactly on 2*pi when theta + pi is a tiny negative.
    if wrapped >= std::f64::consts::PI {
        wrapped - std::f64::consts::TAU
    } else {
        wrapped
    }
}

/// A planar similarity transform: translation, rotation and a positive
/// uniform scale.
///
/// Acting on a point `m` of the source frame, the transform yields
/// `scale * (R(theta) * m + [x, y])` in the destination frame, so the
/// translation `(x, y)` is expressed in source-frame units and
/// `scale * (x, y)` is the lever arm in destination units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim2 {
    x: f64,
    y: f64,
    theta: f64,
    scale: f64,
}

impl Sim2 {
    /// Builds a transform, normalizing the angle. The scale must be a
    /// strictly positive finite number.
    pub fn new(x: f64, y: f64, theta: f64, scale: f64) -> Self {
        assert!(
            scale.is_finite() && scale > 0.0,
            "Sim2 scale must be positive, got {scale}"
        );
        assert!(
            x.is_finite() && y.is_finite(),
            "Sim2 translation must be finite"
        );
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            scale,
        }
    }

    /// The identity transform.
    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 1.0)
    }

    /// Translation x component (source-frame units).
    pub fn x(&self) -> f64 {
        self.x
    }

    /// Translation y component (source-frame units).
    pub fn y(&self) -> f64 {
        self.y
    }

    /// Rotation angle in `[-pi, pi)`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Scale factor (destination units per source unit).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The lever arm `scale * (x, y)` in destination-frame units.
    pub fn metric_lever_arm(&self) -> Vector2<f64> {
        Vector2::new(self.scale * self.x, self.scale * self.y)
    }

    /// Group composition `self ⊕ other`.
    ///
    /// Compatible with [`Sim2::apply`]: applying the composite equals
    /// applying `self` after `other`.
    pub fn compose(&self, other: &Sim2) -> Sim2 {
        let (sin_a, cos_a) = self.theta.sin_cos();
        Sim2::new(
            self.x / other.scale + other.x * cos_a - other.y * sin_a,
            self.y / other.scale + other.x * sin_a + other.y * cos_a,
            self.theta + other.theta,
            self.scale * other.scale,
        )
    }

    /// Group inverse `⊖self`.
    pub fn inverse(&self) -> Sim2 {
        let (sin_a, cos_a) = self.theta.sin_cos();
        Sim2::new(
            -self.scale * (self.x * cos_a + self.y * sin_a),
            self.scale * (self.x * sin_a - self.y * cos_a),
            -self.theta,
            1.0 / self.scale,
        )
    }

    /// Maps a point of the source frame into the destination frame.
    pub fn apply(&self, m: Vector2<f64>) -> Vector2<f64> {
        let (sin_a, cos_a) = self.theta.sin_cos();
        Vector2::new(
            self.scale * (cos_a * m.x - sin_a * m.y + self.x),
            self.scale * (sin_a * m.x + cos_a * m.y + self.y),
        )
    }
}

impl From<Pose2> for Sim2 {
    fn from(p: Pose2) -> Self {
        Sim2::new(p.x, p.y, p.theta, 1.0)
    }
}

/// A planar rigid pose (or incremental motion): a [`Sim2`] with unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    x: f64,
    y: f64,
    theta: f64,
}

impl Pose2 {
    /// Builds a pose, normalizing the angle.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite(),
            "Pose2 translation must be finite"
        );
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// The identity pose.
    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Translation x component.
    pub fn x(&self) -> f64 {
        self.x
    }

    /// Translation y component.
    pub fn y(&self) -> f64 {
        self.y
    }

    /// Heading in `[-pi, pi)`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Translation as a vector.
    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// SE(2) composition; the unit-scale specialization of [`Sim2::compose`].
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (sin_a, cos_a) = self.theta.sin_cos();
        Pose2::new(
            self.x + other.x * cos_a - other.y * sin_a,
            self.y + other.x * sin_a + other.y * cos_a,
            self.theta + other.theta,
        )
    }

    /// SE(2) inverse.
    pub fn inverse(&self) -> Pose2 {
        let (sin_a, cos_a) = self.theta.sin_cos();
        Pose2::new(
            -(self.x * cos_a + self.y * sin_a),
            self.x * sin_a - self.y * cos_a,
            -self.theta,
        )
    }
}

impl TryFrom<Sim2> for Pose2 {
    type Error = crate::CalibError;

    fn try_from(s: Sim2) -> Result<Self, Self::Error> {
        if s.scale != 1.0 {
            return Err(crate::CalibError::InvalidValue(format!(
                "cannot drop non-unit scale {} into an SE(2) pose",
                s.scale
            )));
        }
        Ok(Pose2::new(s.x, s.y, s.theta))
    }
}

/// A rigid transform in 3D, stored as a rotation matrix and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Pose3 {
    /// Maximum deviation from orthonormality accepted by [`Pose3::from_matrix`].
    pub const ROTATION_TOL: f64 = 1e-9;

    /// Builds a pose from a raw rotation matrix, checking that it is
    /// orthonormal with determinant +1 within [`Pose3::ROTATION_TOL`].
    pub fn from_matrix(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, crate::CalibError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > Self::ROTATION_TOL {
            return Err(crate::CalibError::InvalidValue(format!(
                "rotation not orthonormal (||R'R - I|| = {defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > Self::ROTATION_TOL {
            return Err(crate::CalibError::InvalidValue(format!(
                "rotation determinant {det} != 1"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    /// Builds a pose from an already-validated rotation.
    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// The identity transform.
    pub fn identity() -> Self {
        Self::from_parts(Rotation3::identity(), Vector3::zeros())
    }

    /// Rotation part.
    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    /// Translation part.
    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Rigid composition `self * other`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rigid inverse.
    pub fn inverse(&self) -> Pose3 {
        let rot_inv = self.rotation.inverse();
        Pose3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Applies the transform to a point.
    pub fn apply(&self, m: Vector3<f64>) -> Vector3<f64> {
        self.rotation * m + self.translation
    }
}

/// The 3DoF relation between a sensor frame and the ground plane:
/// perpendicular distance plus the pitch/roll pair.
///
/// The plane's local frame sits at the projection of the sensor origin onto
/// the plane, z-axis along the plane normal; the in-plane rotation is fixed
/// to zero (it is calibrated later as the planar yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundAlignment {
    z: f64,
    alpha: f64,
    beta: f64,
}

impl GroundAlignment {
    /// Builds an alignment. The perpendicular distance must be strictly
    /// positive; angles are normalized.
    pub fn new(z: f64, alpha: f64, beta: f64) -> Self {
        assert!(
            z.is_finite() && z > 0.0,
            "ground-alignment distance must be positive, got {z}"
        );
        Self {
            z,
            alpha: normalize_angle(alpha),
            beta: normalize_angle(beta),
        }
    }

    /// Perpendicular distance from the sensor origin to the plane
    /// (sensor length units).
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Roll-like angle (rotation about the sensor x-axis), radians.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Pitch-like angle (rotation about the sensor y-axis), radians.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Third row of the alignment rotation,
    /// `[-sin(beta), cos(beta)sin(alpha), cos(beta)cos(alpha)]`.
    ///
    /// This is the plane normal expressed in the sensor frame; it has unit
    /// norm by construction.
    pub fn normal_row(&self) -> Vector3<f64> {
        let (sin_a, cos_a) = self.alpha.sin_cos();
        let (sin_b, cos_b) = self.beta.sin_cos();
        Vector3::new(-sin_b, cos_b * sin_a, cos_b * cos_a)
    }

    /// The full SE(3) transform taking sensor coordinates to the local
    /// ground frame: rotation `R_y(beta) * R_x(alpha)`, translation
    /// `(0, 0, z)`.
    pub fn to_pose3(&self) -> Pose3 {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), self.beta)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.alpha);
        Pose3::from_parts(rot, Vector3::new(0.0, 0.0, self.z))
    }
}
