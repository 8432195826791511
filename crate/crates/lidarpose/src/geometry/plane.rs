use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Plane n·p + d = 0 with unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::RejectedInput(format!(
                "plane normal not unit length: |n| = {n}"
            )));
        }
        Ok(Plane { normal, offset })
    }

    /// Normalizes the given normal; rejects near-zero vectors.
    pub fn from_unnormalized(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if n < 1e-12 {
            return Err(Error::RejectedInput("zero-length plane normal".into()));
        }
        Ok(Plane {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_on_plane() {
        let plane = Plane::new(Vector3::new(0.0, 0.0, 1.0), -0.5).unwrap();
        assert_relative_eq!(
            plane.signed_distance(&Vector3::new(0.1, 0.2, 0.5)),
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            plane.signed_distance(&Vector3::new(0.0, 0.0, 0.503)),
            0.003,
            epsilon = 1e-15
        );
    }

    #[test]
    fn negative_side() {
        let plane = Plane::new(Vector3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert_relative_eq!(
            plane.signed_distance(&Vector3::new(-0.2, 5.0, 5.0)),
            -0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(Plane::new(Vector3::new(1.0, 1.0, 0.0), 0.0).is_err());
    }
}
