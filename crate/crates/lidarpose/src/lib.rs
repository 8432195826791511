//! 2D-LiDAR probe pose initialization toolkit.
//!
//! A robot-mounted 2D range scanner is calibrated to the tool frame against a
//! flat board, swept over a chest phantom to reconstruct the surface in 3D,
//! and the cleaned cloud is matched against scaled chest templates to produce
//! an initial probe position and surface-normal orientation.
//!
//! Pipeline stages, each its own module:
//!
//! 1. [`simulator`] – synthetic scanner/robot/phantom data with ground truth
//! 2. [`calibration`] – plane-based LiDAR-to-TCP extrinsic estimation
//! 3. [`reconstruction`] – sweep accumulation into a base-frame cloud
//! 4. [`preprocess`] – downsampling, outlier removal, clustering, surface fit
//! 5. [`registration`] – FPFH + FGR + ICP template matching with scale loop
//! 6. [`metrics`] – surface error, tangential error, repeatability statistics

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod preprocess;
pub mod reconstruction;
pub mod registration;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{FrameId, Plane, PointCloud, PolarSample, PolarScan, RigidTransform};
