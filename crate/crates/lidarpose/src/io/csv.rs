//! CSV formats: scan logs, pose logs, and the point-cloud fallback.
//!
//! Scan log header:  `timestamp,theta,range,valid`
//! Pose log header:  `timestamp,tx,ty,tz,qx,qy,qz,qw`  (unit quaternion, scalar-last)
//! Cloud header:     `x,y,z[,nx,ny,nz]`

use crate::error::{Error, Result};
use crate::geometry::{FrameId, PointCloud, PolarSample, PolarScan, RigidTransform};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::io::Write;
use std::path::Path;

/// Writes scans sample-by-sample; scan boundaries are recovered from the
/// angle wrap (a new scan starts whenever theta does not increase).
pub fn write_scan_log(path: &Path, scans: &[PolarScan]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "timestamp,theta,range,valid")?;
    for scan in scans {
        for s in &scan.samples {
            writeln!(
                f,
                "{:?},{:?},{:?},{}",
                s.timestamp,
                s.angle,
                s.range,
                if s.valid { 1 } else { 0 }
            )?;
        }
    }
    Ok(())
}

pub fn read_scan_log(path: &Path) -> Result<Vec<PolarScan>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut scans = Vec::new();
    let mut current: Vec<PolarSample> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() < 4 {
            return Err(Error::Parse("short scan-log row".into()));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("scan log field {i}: {e}")))
        };
        let timestamp = parse(0)?;
        let angle = parse(1)?;
        let range = parse(2)?;
        let valid = record[3].trim() != "0";
        let sample = if valid {
            PolarSample::new(range, angle, timestamp)
        } else {
            PolarSample::invalid(angle, timestamp)
        };
        if let Some(last) = current.last() {
            if sample.angle <= last.angle {
                let ts = current[0].timestamp;
                scans.push(PolarScan::new(std::mem::take(&mut current), ts)?);
            }
        }
        current.push(sample);
    }
    if !current.is_empty() {
        let ts = current[0].timestamp;
        scans.push(PolarScan::new(current, ts)?);
    }
    Ok(scans)
}

pub fn write_pose_log(path: &Path, poses: &[(f64, RigidTransform)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "timestamp,tx,ty,tz,qx,qy,qz,qw")?;
    for (t, pose) in poses {
        let q = pose.quaternion();
        writeln!(
            f,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            t,
            pose.translation.x,
            pose.translation.y,
            pose.translation.z,
            q.i,
            q.j,
            q.k,
            q.w
        )?;
    }
    Ok(())
}

pub fn read_pose_log(
    path: &Path,
    from_frame: FrameId,
    to_frame: FrameId,
) -> Result<Vec<(f64, RigidTransform)>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() < 8 {
            return Err(Error::Parse("short pose-log row".into()));
        }
        let mut vals = [0.0f64; 8];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = record[i]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("pose log field {i}: {e}")))?;
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            vals[7], vals[4], vals[5], vals[6],
        ));
        let pose = RigidTransform::from_quaternion(
            &q,
            Vector3::new(vals[1], vals[2], vals[3]),
            from_frame.clone(),
            to_frame.clone(),
        );
        out.push((vals[0], pose));
    }
    Ok(out)
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if cloud.has_normals() {
        writeln!(f, "x,y,z,nx,ny,nz")?;
        for (p, n) in cloud.points.iter().zip(cloud.normals.as_ref().unwrap()) {
            writeln!(f, "{:?},{:?},{:?},{:?},{:?},{:?}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        }
    } else {
        writeln!(f, "x,y,z")?;
        for p in &cloud.points {
            writeln!(f, "{:?},{:?},{:?}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}

pub fn read_cloud_csv(path: &Path, frame: FrameId) -> Result<PointCloud> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let has_normals = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .len()
        >= 6;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("cloud csv field {i}: {e}")))
        };
        points.push(Vector3::new(parse(0)?, parse(1)?, parse(2)?));
        if has_normals {
            normals.push(Vector3::new(parse(3)?, parse(4)?, parse(5)?));
        }
    }
    if has_normals {
        PointCloud::with_normals(points, normals, frame)
    } else {
        PointCloud::new(points, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationVector;
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    #[test]
    fn scan_log_roundtrip_with_boundaries() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scans.csv");
        let mk = |ts: f64| {
            PolarScan::new(
                vec![
                    PolarSample::new(1.0, 0.1, ts),
                    PolarSample::invalid(0.2, ts + 0.01),
                    PolarSample::new(2.0, 0.3, ts + 0.02),
                ],
                ts,
            )
            .unwrap()
        };
        let scans = vec![mk(0.0), mk(1.0)];
        write_scan_log(&path, &scans).unwrap();
        let back = read_scan_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].samples, scans[0].samples);
        assert_eq!(back[1].samples, scans[1].samples);
    }

    #[test]
    fn pose_log_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("poses.csv");
        let pose = RigidTransform::from_parts(
            &RotationVector::new(Vector3::new(0.1, -0.2, 0.3)),
            Vector3::new(1.0, 2.0, 3.0),
            FrameId::tcp(),
            FrameId::base(),
        );
        write_pose_log(&path, &[(0.5, pose.clone())]).unwrap();
        let back = read_pose_log(&path, FrameId::tcp(), FrameId::base()).unwrap();
        assert_eq!(back.len(), 1);
        assert_relative_eq!(back[0].1.rotation, pose.rotation, epsilon = 1e-12);
        assert_relative_eq!(back[0].1.translation, pose.translation, epsilon = 1e-12);
    }

    #[test]
    fn cloud_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        let cloud = PointCloud::new(
            vec![Vector3::new(0.25, -1.0, 3.5e-4)],
            FrameId::base(),
        )
        .unwrap();
        write_cloud_csv(&path, &cloud).unwrap();
        let back = read_cloud_csv(&path, FrameId::base()).unwrap();
        assert_eq!(back.points, cloud.points);
    }
}
