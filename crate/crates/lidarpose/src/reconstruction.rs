//! Sweep-based 3D reconstruction: accumulate time-stamped 2D scans captured
//! during robot sweeps into a base-frame point cloud using the calibrated
//! extrinsics and time-interpolated TCP poses.

use crate::error::{Error, Result};
use crate::geometry::{
    polar_to_cartesian, sector_filter, FrameId, PointCloud, PolarScan, RigidTransform,
};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Default calibration/sweep sector: [135 deg, 225 deg].
pub const DEFAULT_SECTOR: (f64, f64) = (
    3.0 * std::f64::consts::PI / 4.0,
    5.0 * std::f64::consts::PI / 4.0,
);

/// Robot sweep path: time-stamped TCP waypoints plus the retained scan sector.
#[derive(Debug, Clone)]
pub struct SweepTrajectory {
    pub waypoints: Vec<(f64, RigidTransform)>,
    pub clearance: f64,
    pub sector: (f64, f64),
}

impl SweepTrajectory {
    pub fn new(
        waypoints: Vec<(f64, RigidTransform)>,
        clearance: f64,
        sector: (f64, f64),
    ) -> Result<Self> {
        if clearance <= 0.0 {
            return Err(Error::RejectedInput("clearance must be positive".into()));
        }
        if waypoints.len() < 2 {
            return Err(Error::RejectedInput("need >= 2 waypoints".into()));
        }
        for w in waypoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::RejectedInput(
                    "waypoint timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(SweepTrajectory {
            waypoints,
            clearance,
            sector,
        })
    }

    pub fn time_span(&self) -> (f64, f64) {
        (
            self.waypoints.first().unwrap().0,
            self.waypoints.last().unwrap().0,
        )
    }
}

/// Scans recorded along one sweep.
#[derive(Debug, Clone)]
pub struct SweepRecording {
    pub trajectory: SweepTrajectory,
    pub scans: Vec<PolarScan>,
}

impl SweepRecording {
    pub fn new(trajectory: SweepTrajectory, scans: Vec<PolarScan>) -> Result<Self> {
        let (t0, t1) = trajectory.time_span();
        for s in &scans {
            if s.scan_timestamp < t0 || s.scan_timestamp > t1 {
                return Err(Error::RejectedInput(format!(
                    "scan timestamp {} outside trajectory span [{t0}, {t1}]",
                    s.scan_timestamp
                )));
            }
        }
        Ok(SweepRecording { trajectory, scans })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Scanner revolution period, used to spread sample timestamps across a scan.
    pub revolution_period: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            revolution_period: 0.1,
        }
    }
}

/// Pose at time t: linear interpolation of translation, slerp of rotation
/// between bracketing waypoints. No extrapolation.
pub fn interpolate_pose(trajectory: &SweepTrajectory, t: f64) -> Result<RigidTransform> {
    let (t0, t1) = trajectory.time_span();
    if t < t0 || t > t1 {
        return Err(Error::OutOfRange(format!(
            "t = {t} outside trajectory span [{t0}, {t1}]"
        )));
    }
    let wps = &trajectory.waypoints;
    // Bracketing segment (waypoint hits resolve to the exact pose).
    let i = match wps.binary_search_by(|(wt, _)| wt.partial_cmp(&t).unwrap()) {
        Ok(i) => return Ok(wps[i].1.clone()),
        Err(i) => i,
    };
    let (ta, pa) = &wps[i - 1];
    let (tb, pb) = &wps[i];
    let alpha = (t - ta) / (tb - ta);
    let trans = pa.translation * (1.0 - alpha) + pb.translation * alpha;
    let qa = pa.quaternion();
    let qb = pb.quaternion();
    let q = qa.slerp(&qb, alpha);
    Ok(RigidTransform::from_quaternion(
        &q,
        trans,
        pa.from_frame.clone(),
        pa.to_frame.clone(),
    ))
}

/// Accumulate all sweeps into the raw base-frame cloud.
///
/// Each valid sector sample gets a per-sample timestamp interpolated across
/// the scan revolution, the TCP pose at that time, and is mapped through
/// tcp_pose * extrinsics. Output order is deterministic: recording-major,
/// scan-major, sample index within scan.
pub fn accumulate_sweeps(
    recordings: &[SweepRecording],
    extrinsics: &RigidTransform,
    cfg: &ReconstructionConfig,
) -> Result<PointCloud> {
    if recordings.is_empty() {
        return Err(Error::RejectedInput("no sweep recordings".into()));
    }
    if extrinsics.from_frame != FrameId::lidar() || extrinsics.to_frame != FrameId::tcp() {
        return Err(Error::FrameMismatch {
            expected: "lidar->tcp".into(),
            got: format!("{}->{}", extrinsics.from_frame, extrinsics.to_frame),
        });
    }
    let mut points: Vec<Vector3<f64>> = Vec::new();
    for rec in recordings {
        let (lo, hi) = rec.trajectory.sector;
        let (t0, t1) = rec.trajectory.time_span();
        for scan in &rec.scans {
            let filtered = sector_filter(scan, lo, hi)?;
            for sample in filtered.valid_samples() {
                // Per-sample time: linear across the revolution by angle.
                let frac = sample.angle / std::f64::consts::TAU;
                let ts = (scan.scan_timestamp + frac * cfg.revolution_period).clamp(t0, t1);
                let tcp_pose = interpolate_pose(&rec.trajectory, ts)?;
                let p_l = polar_to_cartesian(sample)?;
                let sensor_to_base = tcp_pose.compose(extrinsics)?;
                points.push(sensor_to_base.transform_point(&p_l));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    PointCloud::new(points, FrameId::base())
}
