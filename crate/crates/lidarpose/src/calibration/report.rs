//! Serialized calibration report: JSON summary plus a raw-residual CSV.
//! Millimeter and degree units in the report; meters and radians in code.

use crate::calibration::CalibrationResult;
use crate::error::{Error, Result};
use crate::metrics::{residual_histogram, ResidualHistogram};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExtrinsicsRecord {
    pub rotation_vector: [f64; 3],
    pub translation_m: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlaneRecord {
    pub normal: [f64; 3],
    pub offset_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationReport {
    pub extrinsics: ExtrinsicsRecord,
    pub plane: PlaneRecord,
    pub per_pose_rms_mm: Vec<f64>,
    pub overall_rms_mm: f64,
    pub translation_sigma_mm: [f64; 3],
    pub rotation_sigma_deg: [f64; 3],
    pub inlier_counts: Vec<usize>,
    pub converged: bool,
    pub histogram: ResidualHistogram,
}

impl CalibrationReport {
    pub fn from_result(result: &CalibrationResult) -> Self {
        let omega = result.extrinsics.rotation_vector().omega;
        let t = result.extrinsics.translation;
        let all: Vec<f64> = result
            .residuals_by_pose
            .iter()
            .flatten()
            .copied()
            .collect();
        CalibrationReport {
            extrinsics: ExtrinsicsRecord {
                rotation_vector: [omega.x, omega.y, omega.z],
                translation_m: [t.x, t.y, t.z],
            },
            plane: PlaneRecord {
                normal: [
                    result.plane.normal.x,
                    result.plane.normal.y,
                    result.plane.normal.z,
                ],
                offset_m: result.plane.offset,
            },
            per_pose_rms_mm: result.per_pose_rms.iter().map(|r| r * 1e3).collect(),
            overall_rms_mm: result.overall_rms * 1e3,
            translation_sigma_mm: [
                result.translation_sigma.x * 1e3,
                result.translation_sigma.y * 1e3,
                result.translation_sigma.z * 1e3,
            ],
            rotation_sigma_deg: [
                result.rotation_sigma.x.to_degrees(),
                result.rotation_sigma.y.to_degrees(),
                result.rotation_sigma.z.to_degrees(),
            ],
            inlier_counts: result.inlier_counts.clone(),
            converged: result.converged,
            histogram: residual_histogram(&all),
        }
    }
}

pub fn write_calibration_report(path: &Path, report: &CalibrationReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("report serialize: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_calibration_report(path: &Path) -> Result<CalibrationReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("report parse: {e}")))
}

/// Raw residuals, one row per inlier: pose_index,residual_m.
pub fn write_residuals_csv(path: &Path, residuals_by_pose: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pose_index", "residual_m"])?;
    for (k, group) in residuals_by_pose.iter().enumerate() {
        for r in group {
            w.write_record([k.to_string(), format!("{r:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
