use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One range return from the 2D scanner. Angles live in [0, 2pi);
/// dropouts are marked invalid and carry range 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarSample {
    pub range: f64,
    pub angle: f64,
    pub timestamp: f64,
    pub valid: bool,
}

impl PolarSample {
    pub fn new(range: f64, angle: f64, timestamp: f64) -> Self {
        PolarSample {
            range,
            angle: normalize_angle(angle),
            timestamp,
            valid: true,
        }
    }

    pub fn invalid(angle: f64, timestamp: f64) -> Self {
        PolarSample {
            range: 0.0,
            angle: normalize_angle(angle),
            timestamp,
            valid: false,
        }
    }
}

/// Wrap into [0, 2pi).
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % TAU;
    if a < 0.0 {
        a += TAU;
    }
    a
}

/// One revolution of the scanner: samples at strictly increasing angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarScan {
    pub samples: Vec<PolarSample>,
    pub scan_timestamp: f64,
}

impl PolarScan {
    pub fn new(samples: Vec<PolarSample>, scan_timestamp: f64) -> Result<Self> {
        for w in samples.windows(2) {
            if w[1].angle <= w[0].angle {
                return Err(Error::RejectedInput(format!(
                    "scan angles not strictly increasing: {} then {}",
                    w[0].angle, w[1].angle
                )));
            }
        }
        Ok(PolarScan {
            samples,
            scan_timestamp,
        })
    }

    pub fn valid_samples(&self) -> impl Iterator<Item = &PolarSample> {
        self.samples.iter().filter(|s| s.valid)
    }

    pub fn num_valid(&self) -> usize {
        self.samples.iter().filter(|s| s.valid).count()
    }
}

/// Eq: p = (r cos theta, r sin theta, 0) in the sensor frame.
pub fn polar_to_cartesian(sample: &PolarSample) -> Result<Vector3<f64>> {
    if !sample.valid {
        return Err(Error::RejectedInput(
            "cannot convert invalid (dropout) sample".into(),
        ));
    }
    Ok(Vector3::new(
        sample.range * sample.angle.cos(),
        sample.range * sample.angle.sin(),
        0.0,
    ))
}

/// Keep samples with angle in [lo, hi], order preserved. Invalid samples dropped.
pub fn sector_filter(scan: &PolarScan, lo: f64, hi: f64) -> Result<PolarScan> {
    if !(0.0 <= lo && lo < hi && hi < TAU) {
        return Err(Error::RejectedInput(format!(
            "sector bounds must satisfy 0 <= lo < hi < 2pi, got [{lo}, {hi}]"
        )));
    }
    let samples = scan
        .samples
        .iter()
        .filter(|s| s.valid && s.angle >= lo && s.angle <= hi)
        .copied()
        .collect();
    Ok(PolarScan {
        samples,
        scan_timestamp: scan.scan_timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn polar_axis_cases() {
        let p = polar_to_cartesian(&PolarSample::new(1.0, PI, 0.0)).unwrap();
        assert_relative_eq!(p, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        let p = polar_to_cartesian(&PolarSample::new(0.5, FRAC_PI_2, 0.0)).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.5, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn polar_derived_case() {
        // r=0.8, theta=3pi/4 -> (-0.56569, 0.56569, 0)
        let p = polar_to_cartesian(&PolarSample::new(0.8, 3.0 * PI / 4.0, 0.0)).unwrap();
        assert_relative_eq!(p.x, -0.565685424949238, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.565685424949238, epsilon = 1e-12);
        assert_relative_eq!(p.z, 0.0);
    }

    #[test]
    fn polar_norm_equals_range() {
        for i in 0..100 {
            let r = 0.1 + 0.05 * i as f64;
            let theta = (i as f64) * 0.06;
            let p = polar_to_cartesian(&PolarSample::new(r, theta, 0.0)).unwrap();
            assert!((p.norm() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sample_rejected() {
        assert!(polar_to_cartesian(&PolarSample::invalid(0.0, 0.0)).is_err());
    }

    fn full_scan() -> PolarScan {
        let n = 500;
        let samples = (0..n)
            .map(|i| PolarSample::new(1.0, TAU * i as f64 / n as f64, 0.0))
            .collect();
        PolarScan::new(samples, 0.0).unwrap()
    }

    #[test]
    fn sector_retains_calibration_window() {
        let scan = full_scan();
        let lo = 3.0 * PI / 4.0;
        let hi = 5.0 * PI / 4.0;
        let out = sector_filter(&scan, lo, hi).unwrap();
        assert!(!out.samples.is_empty());
        for s in &out.samples {
            assert!(s.angle >= lo && s.angle <= hi);
        }
        // order preserved
        for w in out.samples.windows(2) {
            assert!(w[1].angle > w[0].angle);
        }
    }

    #[test]
    fn sector_near_identity() {
        let scan = full_scan();
        let out = sector_filter(&scan, 0.0, TAU - 1e-9).unwrap();
        assert_eq!(out.samples.len(), scan.samples.len());
    }

    #[test]
    fn sector_empty_result_is_legal() {
        let scan = PolarScan::new(vec![PolarSample::new(1.0, 0.0, 0.0)], 0.0).unwrap();
        let out = sector_filter(&scan, FRAC_PI_2, PI).unwrap();
        assert!(out.samples.is_empty());
    }
}
