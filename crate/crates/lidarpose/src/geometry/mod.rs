//! Frames, rigid transforms, plane geometry, polar scans, point containers,
//! and nearest-neighbor indexing shared by every pipeline stage.
//!
//! All types are immutable after construction; operations are pure.

pub mod cloud;
pub mod frame;
pub mod kdtree;
pub mod plane;
pub mod rotation;
pub mod scan;
pub mod transform;

pub use cloud::PointCloud;
pub use frame::FrameId;
pub use kdtree::NeighborIndex;
pub use plane::Plane;
pub use rotation::{skew, RotationVector};
pub use scan::{normalize_angle, polar_to_cartesian, sector_filter, PolarSample, PolarScan};
pub use transform::RigidTransform;
