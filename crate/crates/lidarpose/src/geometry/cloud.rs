use crate::error::{Error, Result};
use crate::geometry::frame::FrameId;
use crate::geometry::transform::RigidTransform;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Unordered 3D points in a named frame, optionally with unit normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub frame: FrameId,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: FrameId) -> Result<Self> {
        for p in &points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::RejectedInput("non-finite point coordinate".into()));
            }
        }
        Ok(PointCloud {
            points,
            normals: None,
            frame,
        })
    }

    pub fn with_normals(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        frame: FrameId,
    ) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::RejectedInput(format!(
                "normal count {} != point count {}",
                normals.len(),
                points.len()
            )));
        }
        for n in &normals {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::RejectedInput(format!(
                    "non-unit normal: |n| = {}",
                    n.norm()
                )));
            }
        }
        let mut cloud = PointCloud::new(points, frame)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Maps the cloud through T; requires T.from_frame to match the cloud frame.
    /// Normals are rotated.
    pub fn transformed(&self, t: &RigidTransform) -> Result<PointCloud> {
        if t.from_frame != self.frame {
            return Err(Error::FrameMismatch {
                expected: t.from_frame.name().to_string(),
                got: self.frame.name().to_string(),
            });
        }
        let points = self.points.iter().map(|p| t.transform_point(p)).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| t.transform_direction(n)).collect());
        Ok(PointCloud {
            points,
            normals,
            frame: t.to_frame.clone(),
        })
    }

    /// Subset by point indices; keeps normals aligned.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
            frame: self.frame.clone(),
        }
    }
}
