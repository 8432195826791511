//! RANSAC 2D line extraction from sector-filtered scans, with total
//! least-squares refit on the inlier set.

use crate::calibration::SolverConfig;
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, PolarScan};
use crate::simulator::beam_rng;
use nalgebra::{Matrix2, Vector2};
use rand::Rng;

/// Dominant 2D line in the scan plane.
#[derive(Debug, Clone)]
pub struct LineFitResult {
    /// Indices into the sector-filtered sample list (valid samples only).
    pub inlier_indices: Vec<usize>,
    pub direction: Vector2<f64>,
    pub point_on_line: Vector2<f64>,
    pub inlier_rms: f64,
}

fn point_line_distance(p: &Vector2<f64>, origin: &Vector2<f64>, dir: &Vector2<f64>) -> f64 {
    let d = p - origin;
    (d.x * dir.y - d.y * dir.x).abs()
}

/// Total least squares: line through the centroid along the dominant
/// eigenvector of the 2x2 scatter matrix.
fn tls_fit(points: &[Vector2<f64>]) -> (Vector2<f64>, Vector2<f64>) {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let max_idx = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let dir = eig.eigenvectors.column(max_idx).into_owned().normalize();
    (centroid, dir)
}

/// RANSAC line fit over the valid samples of a sector-filtered scan.
///
/// Per-iteration RNG streams are counter-based so that results do not depend
/// on evaluation order. Best model by inlier count, first-found on ties.
pub fn fit_scan_line(scan: &PolarScan, cfg: &SolverConfig) -> Result<LineFitResult> {
    let points: Vec<Vector2<f64>> = scan
        .valid_samples()
        .map(|s| {
            let p = polar_to_cartesian(s).expect("valid sample");
            Vector2::new(p.x, p.y)
        })
        .collect();
    if points.len() < cfg.min_inliers.max(2) {
        return Err(Error::NotEnoughData(format!(
            "{} valid samples, need >= {}",
            points.len(),
            cfg.min_inliers
        )));
    }

    let mut best: Option<(usize, Vec<usize>)> = None;
    for iter in 0..cfg.ransac_iterations {
        let mut rng = beam_rng(cfg.seed, 0x11e_f17, iter as u64);
        let i = rng.gen_range(0..points.len());
        let mut j = rng.gen_range(0..points.len() - 1);
        if j >= i {
            j += 1;
        }
        let origin = points[i];
        let chord = points[j] - points[i];
        let norm = chord.norm();
        if norm < 1e-12 {
            continue;
        }
        let dir = chord / norm;
        let inliers: Vec<usize> = (0..points.len())
            .filter(|&k| point_line_distance(&points[k], &origin, &dir) <= cfg.ransac_threshold)
            .collect();
        if best.as_ref().map_or(true, |(c, _)| inliers.len() > *c) {
            best = Some((inliers.len(), inliers));
        }
    }

    let (count, inlier_indices) = best.ok_or_else(|| {
        Error::DegenerateScan("RANSAC found no candidate line".into())
    })?;
    if count < cfg.min_inliers {
        return Err(Error::DegenerateScan(format!(
            "best line has {count} inliers, need >= {}",
            cfg.min_inliers
        )));
    }

    let inlier_points: Vec<Vector2<f64>> =
        inlier_indices.iter().map(|&k| points[k]).collect();
    let (point_on_line, direction) = tls_fit(&inlier_points);
    let inlier_rms = (inlier_points
        .iter()
        .map(|p| point_line_distance(p, &point_on_line, &direction).powi(2))
        .sum::<f64>()
        / inlier_points.len() as f64)
        .sqrt();

    Ok(LineFitResult {
        inlier_indices,
        direction,
        point_on_line,
        inlier_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PolarSample;

    fn scan_from_xy(points: &[(f64, f64)]) -> PolarScan {
        // build polar samples; sort by angle to satisfy the scan invariant
        let mut samples: Vec<PolarSample> = points
            .iter()
            .map(|&(x, y)| {
                let r = (x * x + y * y).sqrt();
                let theta = crate::geometry::normalize_angle(y.atan2(x));
                PolarSample::new(r, theta, 0.0)
            })
            .collect();
        samples.sort_by(|a, b| a.angle.partial_cmp(&b.angle).unwrap());
        samples.dedup_by(|a, b| (a.angle - b.angle).abs() < 1e-12);
        PolarScan::new(samples, 0.0).unwrap()
    }

    fn test_cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn exact_collinear_points_all_inliers() {
        // line x = -0.5 (in the sector around theta = pi)
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|i| (-0.5, -0.25 + 0.01 * i as f64))
            .collect();
        let scan = scan_from_xy(&pts);
        assert_eq!(scan.samples.len(), 50);
        let fit = fit_scan_line(&scan, &test_cfg()).unwrap();
        assert_eq!(fit.inlier_indices.len(), 50);
        assert!(fit.inlier_rms < 1e-12);
    }

    #[test]
    fn outliers_rejected_at_threshold() {
        let mut pts: Vec<(f64, f64)> = (0..45)
            .map(|i| (-0.5, -0.22 + 0.01 * i as f64))
            .collect();
        // 5 outliers offset 50 mm off the line
        for i in 0..5 {
            pts.push((-0.55, -0.24 + 0.002 * i as f64));
        }
        let scan = scan_from_xy(&pts);
        let fit = fit_scan_line(&scan, &test_cfg()).unwrap();
        assert_eq!(fit.inlier_indices.len(), 45);
        // every inlier is on the x = -0.5 line
        let points: Vec<Vector2<f64>> = scan
            .valid_samples()
            .map(|s| {
                let p = polar_to_cartesian(s).unwrap();
                Vector2::new(p.x, p.y)
            })
            .collect();
        for &k in &fit.inlier_indices {
            assert!((points[k].x - (-0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_points_is_error() {
        let scan = scan_from_xy(&[(-0.5, 0.0), (-0.5, 0.01), (-0.45, 0.03)]);
        let err = fit_scan_line(&scan, &test_cfg());
        assert!(matches!(err, Err(Error::NotEnoughData(_))));
    }
}
