use crate::error::{Error, Result};
use crate::geometry::frame::FrameId;
use crate::geometry::rotation::RotationVector;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

const ORTHO_TOL: f64 = 1e-9;

/// SE(3) pose relating two named frames: maps points expressed in
/// `from_frame` into `to_frame` via R*p + t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub from_frame: FrameId,
    pub to_frame: FrameId,
}

impl RigidTransform {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from_frame: FrameId,
        to_frame: FrameId,
    ) -> Result<Self> {
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if ortho_err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::RejectedInput(format!(
                "rotation not orthonormal: |R^T R - I| = {ortho_err:.3e}, det = {det}"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
            from_frame,
            to_frame,
        })
    }

    pub fn identity(frame: FrameId) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from_frame: frame.clone(),
            to_frame: frame,
        }
    }

    pub fn from_parts(
        rotvec: &RotationVector,
        translation: Vector3<f64>,
        from_frame: FrameId,
        to_frame: FrameId,
    ) -> Self {
        RigidTransform {
            rotation: rotvec.exp(),
            translation,
            from_frame,
            to_frame,
        }
    }

    pub fn rotation_vector(&self) -> RotationVector {
        RotationVector::log(&self.rotation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn from_quaternion(
        q: &UnitQuaternion<f64>,
        translation: Vector3<f64>,
        from_frame: FrameId,
        to_frame: FrameId,
    ) -> Self {
        RigidTransform {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
            from_frame,
            to_frame,
        }
    }

    /// R*p + t. Frame bookkeeping is carried by point clouds, not bare vectors.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotate a direction vector (no translation).
    pub fn transform_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from_frame: self.to_frame.clone(),
            to_frame: self.from_frame.clone(),
        }
    }

    /// (self ∘ other): maps other.from_frame into self.to_frame.
    /// Requires self.from_frame == other.to_frame.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform> {
        if self.from_frame != other.to_frame {
            return Err(Error::FrameMismatch {
                expected: self.from_frame.name().to_string(),
                got: other.to_frame.name().to_string(),
            });
        }
        Ok(RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            from_frame: other.from_frame.clone(),
            to_frame: self.to_frame.clone(),
        })
    }

    /// Compose ignoring frame names; used where the caller re-labels frames.
    pub fn compose_unchecked(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            from_frame: other.from_frame.clone(),
            to_frame: self.to_frame.clone(),
        }
    }
}
