//! Quantitative evaluation: surface error vs a reference cloud, sphere-marker
//! projection and tangential error, repeatability statistics (within-subject
//! SD, ICC), and calibration residual summaries.

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Nearest-neighbor surface error of a source cloud against a reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceErrorReport {
    /// RMS of nearest-neighbor distances, meters.
    pub e_rmse: f64,
    /// 95th percentile distance (type-7 linear interpolation), meters.
    pub e_95: f64,
    /// Fraction of source points within `tolerance` of the reference.
    pub coverage: f64,
    pub tolerance: f64,
    pub per_point_distances: Vec<f64>,
}

/// Distance from each source point to its nearest reference point.
pub fn surface_error(
    source: &PointCloud,
    reference: &PointCloud,
    tolerance: f64,
) -> Result<SurfaceErrorReport> {
    if source.is_empty() || reference.is_empty() {
        return Err(Error::RejectedInput("empty cloud in surface_error".into()));
    }
    let index = NeighborIndex::build(&reference.points);
    let distances: Vec<f64> = source
        .points
        .iter()
        .map(|p| index.query(p, 1)[0].1)
        .collect();
    let n = distances.len() as f64;
    let e_rmse = (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let e_95 = percentile(&distances, 0.95);
    let coverage = distances.iter().filter(|&&d| d <= tolerance).count() as f64 / n;
    Ok(SurfaceErrorReport {
        e_rmse,
        e_95,
        coverage,
        tolerance,
        per_point_distances: distances,
    })
}

/// Type-7 (linear interpolation between order statistics) percentile, q in [0,1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

/// Orthogonal projection of the sphere-marker point onto the tangent plane at
/// the estimated probe point: p_par = p_s + (I - n n^T)(p_marker - p_s).
pub fn project_marker(
    p_sphere: &Vector3<f64>,
    p_s: &Vector3<f64>,
    n_s: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    if (n_s.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::RejectedInput(format!(
            "non-unit normal in project_marker: |n| = {}",
            n_s.norm()
        )));
    }
    let d = p_sphere - p_s;
    Ok(p_s + (d - n_s * n_s.dot(&d)))
}

/// Euclidean tangential positional error.
pub fn tangential_error(p_parallel: &Vector3<f64>, p_s: &Vector3<f64>) -> f64 {
    (p_parallel - p_s).norm()
}

/// Which intraclass-correlation form to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IccForm {
    /// One-way random effects, single rater: ICC(1,1).
    #[default]
    OneWay,
    /// Two-way random effects, single rater, absolute agreement: ICC(2,1).
    TwoWay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    pub per_subject_mean: Vec<f64>,
    pub per_subject_sd: Vec<f64>,
    pub icc: f64,
    pub icc_form: IccForm,
    pub trials: Vec<Vec<f64>>,
}

/// Per-subject mean/SD (sample SD, n-1) and ICC over a subjects x trials matrix.
///
/// ICC(1,1) = (MS_between - MS_within) / (MS_between + (k-1) MS_within).
/// Degenerate all-equal input (MS_within = MS_between = 0) reports ICC = 1.0.
pub fn repeatability(trials: &[Vec<f64>], form: IccForm) -> Result<RepeatabilityReport> {
    let n = trials.len();
    if n < 2 {
        return Err(Error::RejectedInput("need >= 2 subjects".into()));
    }
    let k = trials[0].len();
    if k < 2 {
        return Err(Error::RejectedInput("need >= 2 trials per subject".into()));
    }
    if trials.iter().any(|row| row.len() != k) {
        return Err(Error::RejectedInput("ragged trial matrix".into()));
    }

    let per_subject_mean: Vec<f64> =
        trials.iter().map(|row| row.iter().sum::<f64>() / k as f64).collect();
    let per_subject_sd: Vec<f64> = trials
        .iter()
        .zip(&per_subject_mean)
        .map(|(row, m)| {
            (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        })
        .collect();

    let grand = trials.iter().flatten().sum::<f64>() / (n * k) as f64;
    let ss_between: f64 = per_subject_mean
        .iter()
        .map(|m| k as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = trials
        .iter()
        .zip(&per_subject_mean)
        .map(|(row, m)| row.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let ms_between = ss_between / (n - 1) as f64;
    let ms_within = ss_within / (n * (k - 1)) as f64;

    let icc = match form {
        IccForm::OneWay => {
            if ms_within == 0.0 && ms_between == 0.0 {
                1.0
            } else {
                (ms_between - ms_within) / (ms_between + (k - 1) as f64 * ms_within)
            }
        }
        IccForm::TwoWay => {
            // Two-way decomposition: columns (trials) as the second factor.
            let col_mean: Vec<f64> = (0..k)
                .map(|j| trials.iter().map(|row| row[j]).sum::<f64>() / n as f64)
                .collect();
            let ss_cols: f64 = col_mean.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
            let ss_total: f64 = trials
                .iter()
                .flatten()
                .map(|v| (v - grand).powi(2))
                .sum();
            let ss_err = ss_total - ss_between - ss_cols;
            let ms_cols = ss_cols / (k - 1) as f64;
            let ms_err = ss_err / ((n - 1) * (k - 1)) as f64;
            let denom = ms_between
                + (k - 1) as f64 * ms_err
                + k as f64 * (ms_cols - ms_err) / n as f64;
            if denom == 0.0 {
                1.0
            } else {
                (ms_between - ms_err) / denom
            }
        }
    };

    Ok(RepeatabilityReport {
        per_subject_mean,
        per_subject_sd,
        icc,
        icc_form: form,
        trials: trials.to_vec(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResidualHistogram {
    /// Bin edges in meters, uniform width.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Residuals falling outside [first, last] edge.
    pub underflow: usize,
    pub overflow: usize,
}

/// Fixed-bin histogram: width 0.5 mm over [-6, 6] mm.
pub fn residual_histogram(residuals: &[f64]) -> ResidualHistogram {
    let lo = -6.0e-3;
    let hi = 6.0e-3;
    let width: f64 = 0.5e-3;
    let nbins = ((hi - lo) / width).round() as usize;
    let bin_edges: Vec<f64> = (0..=nbins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; nbins];
    let mut underflow = 0;
    let mut overflow = 0;
    for &r in residuals {
        if r < lo {
            underflow += 1;
        } else if r >= hi {
            overflow += 1;
        } else {
            let b = (((r - lo) / width).floor() as usize).min(nbins - 1);
            counts[b] += 1;
        }
    }
    ResidualHistogram {
        bin_edges,
        counts,
        underflow,
        overflow,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub per_pose_rms: Vec<f64>,
    pub overall_rms: f64,
    pub histogram: ResidualHistogram,
}

/// RMS per pose group, pooled RMS, and the fixed-bin residual histogram.
pub fn calibration_stats(residuals_by_pose: &[Vec<f64>]) -> Result<CalibrationStats> {
    if residuals_by_pose.iter().any(|g| g.is_empty()) {
        return Err(Error::RejectedInput("empty residual group".into()));
    }
    let per_pose_rms: Vec<f64> = residuals_by_pose
        .iter()
        .map(|g| (g.iter().map(|r| r * r).sum::<f64>() / g.len() as f64).sqrt())
        .collect();
    let all: Vec<f64> = residuals_by_pose.iter().flatten().copied().collect();
    let overall_rms = (all.iter().map(|r| r * r).sum::<f64>() / all.len() as f64).sqrt();
    Ok(CalibrationStats {
        per_pose_rms,
        overall_rms,
        histogram: residual_histogram(&all),
    })
}
