//! Poses in the egocentric reference frame and 6-component pose errors.
//!
//! Orientation errors use the rotation-vector (axis-angle) of the relative
//! rotation, which is smooth away from pi and matches the small-angle
//! linearization used by the error dynamics.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};

/// Position and orientation of a frame, expressed in the chain base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: Rotation3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: Rotation3<f64>) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    /// Build a pose from a translation and roll-pitch-yaw angles
    /// (URDF convention: R = Rz(yaw) Ry(pitch) Rx(roll)).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Pose {
            position: Vector3::new(xyz[0], xyz[1], xyz[2]),
            orientation: Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]),
        }
    }

    /// Rigid composition: `self` then `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: self.orientation * other.orientation,
        }
    }

    /// Transform a point given in this pose's local frame into the base frame.
    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * local
    }

    /// Deviation of the orientation from a proper rotation: the max-abs entry
    /// of R^T R - I.
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.orientation.matrix();
        let defect = r.transpose() * r - Matrix3::identity();
        defect.amax()
    }
}

/// Stacked translation + rotation error between two poses.
///
/// `rotation` is the rotation vector (axis times angle, norm <= pi) of the
/// relative rotation `desired * actual^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorVec6 {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl ErrorVec6 {
    pub fn zero() -> Self {
        ErrorVec6 {
            translation: Vector3::zeros(),
            rotation: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        ErrorVec6 {
            translation: Vector3::new(v[0], v[1], v[2]),
            rotation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.translation[0],
            self.translation[1],
            self.translation[2],
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
        )
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn amax(&self) -> f64 {
        self.as_vector().amax()
    }
}

/// Rotation vector (axis times angle, angle in [0, pi]) of a rotation.
///
/// Uses atan2 on the skew/trace parts instead of the acos form, which keeps
/// full precision for small angles; a separate branch handles angles near pi.
pub fn rotation_vector(rotation: &Rotation3<f64>) -> Vector3<f64> {
    let m = rotation.matrix();
    // sin(theta) * axis from the skew-symmetric part.
    let s = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5;
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s_norm = s.norm();
    let theta = s_norm.atan2(c);
    if s_norm > 1e-9 {
        if c > -0.999 {
            return s * (theta / s_norm);
        }
        // fall through to the near-pi branch: the skew part is unreliable.
    } else if c > 0.0 {
        // theta <= 1e-9: rotvec = theta * axis = s to machine precision.
        return s;
    }
    // Near pi: recover the axis from the symmetric part, R + R^T = 2I + 2(1-c) (aa^T - I).
    let sym = (m + m.transpose()) * 0.5;
    let denom = 1.0 - c;
    let aa = Matrix3::identity() + (sym - Matrix3::identity()) / denom;
    let mut anchor = 0;
    for i in 1..3 {
        if aa[(i, i)] > aa[(anchor, anchor)] {
            anchor = i;
        }
    }
    let mut axis = Vector3::zeros();
    axis[anchor] = aa[(anchor, anchor)].max(0.0).sqrt();
    for i in 0..3 {
        if i != anchor {
            axis[i] = aa[(anchor, i)] / axis[anchor];
        }
    }
    let axis = axis.normalize();
    // Sign: align with the skew part when it is informative.
    let axis = if s.dot(&axis) < 0.0 { -axis } else { axis };
    axis * theta
}

/// Pose error `desired - actual`: translation is the position difference,
/// rotation is the rotation vector of `desired.orientation * actual.orientation^T`.
pub fn pose_error(desired: &Pose, actual: &Pose) -> ErrorVec6 {
    let relative = desired.orientation * actual.orientation.inverse();
    ErrorVec6 {
        translation: desired.position - actual.position,
        rotation: rotation_vector(&relative),
    }
}
