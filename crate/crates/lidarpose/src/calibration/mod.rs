//! Extrinsic calibration of the scanner against a planar board: per-pose
//! robust 2D line extraction, then joint estimation of the lidar -> tcp
//! transform and the board plane from point-to-plane residuals.

mod line_fit;
mod report;
mod solver;

pub use line_fit::{fit_scan_line, LineFitResult};
pub use report::{
    read_calibration_report, write_calibration_report, write_residuals_csv, CalibrationReport,
    ExtrinsicsRecord, PlaneRecord,
};
pub use solver::{
    analytic_jacobian, degeneracy_check, estimate_covariance, extract_pose_inliers,
    numeric_jacobian, residual_stack, solve_extrinsics, CalibrationParams, CalibrationResult,
    DegeneracyReport, PoseInliers, PoseScanSet,
};

/// Tuning for line extraction and the robust solver.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Cauchy loss scale, meters.
    pub cauchy_scale: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub parameter_tolerance: f64,
    /// RANSAC inlier distance, meters.
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub min_inliers: usize,
    /// Minimum angular spread required of scan-plane normals and of fitted
    /// line directions across poses, radians.
    pub degeneracy_normal_spread_min: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cauchy_scale: 2.5e-3,
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            parameter_tolerance: 1e-10,
            ransac_threshold: 5e-3,
            ransac_iterations: 500,
            min_inliers: 15,
            degeneracy_normal_spread_min: 10f64.to_radians(),
            seed: 0,
        }
    }
}
