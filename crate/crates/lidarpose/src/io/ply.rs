//! Minimal PLY reader/writer for point clouds.
//!
//! ASCII mode writes x,y,z (and nx,ny,nz when normals are present) as `double`.
//! The reader accepts `ascii` and `binary_little_endian` with float or double
//! vertex properties; only the vertex element is consumed.

use crate::error::{Error, Result};
use crate::geometry::{FrameId, PointCloud};
use nalgebra::Vector3;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = cloud.len();
    writeln!(f, "ply")?;
    writeln!(f, "format ascii 1.0")?;
    writeln!(f, "comment frame {}", cloud.frame.name())?;
    writeln!(f, "element vertex {n}")?;
    writeln!(f, "property double x")?;
    writeln!(f, "property double y")?;
    writeln!(f, "property double z")?;
    if cloud.has_normals() {
        writeln!(f, "property double nx")?;
        writeln!(f, "property double ny")?;
        writeln!(f, "property double nz")?;
    }
    writeln!(f, "end_header")?;
    match &cloud.normals {
        Some(normals) => {
            for (p, nm) in cloud.points.iter().zip(normals) {
                writeln!(f, "{:?} {:?} {:?} {:?} {:?} {:?}", p.x, p.y, p.z, nm.x, nm.y, nm.z)?;
            }
        }
        None => {
            for p in &cloud.points {
                writeln!(f, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    is_double: bool,
}

pub fn read_ply(path: &Path, frame: FrameId) -> Result<PointCloud> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Parse(format!("{}: not a PLY file", path.display())));
    }

    let mut format = None;
    let mut vertex_count = 0usize;
    let mut props: Vec<Property> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse("unexpected EOF in PLY header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, _] => {
                return Err(Error::Parse(format!("unsupported PLY format {other}")))
            }
            ["element", "vertex", count] => {
                vertex_count = count
                    .parse()
                    .map_err(|_| Error::Parse("bad vertex count".into()))?;
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", ty, name] if in_vertex_element => {
                let is_double = match *ty {
                    "double" | "float64" => true,
                    "float" | "float32" => false,
                    other => {
                        return Err(Error::Parse(format!(
                            "unsupported vertex property type {other}"
                        )))
                    }
                };
                props.push(Property {
                    name: name.to_string(),
                    is_double,
                });
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let format = format.ok_or_else(|| Error::Parse("PLY header missing format".into()))?;

    let find = |name: &str| props.iter().position(|p| p.name == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Parse("PLY missing x/y/z vertex properties".into())),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(vertex_count);
    match format {
        PlyFormat::Ascii => {
            for _ in 0..vertex_count {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    return Err(Error::Parse("unexpected EOF in PLY body".into()));
                }
                let row: std::result::Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let row = row.map_err(|e| Error::Parse(format!("bad PLY vertex: {e}")))?;
                if row.len() < props.len() {
                    return Err(Error::Parse("short PLY vertex row".into()));
                }
                rows.push(row);
            }
        }
        PlyFormat::BinaryLe => {
            for _ in 0..vertex_count {
                let mut row = Vec::with_capacity(props.len());
                for p in &props {
                    if p.is_double {
                        let mut buf = [0u8; 8];
                        reader.read_exact(&mut buf)?;
                        row.push(f64::from_le_bytes(buf));
                    } else {
                        let mut buf = [0u8; 4];
                        reader.read_exact(&mut buf)?;
                        row.push(f32::from_le_bytes(buf) as f64);
                    }
                }
                rows.push(row);
            }
        }
    }

    let points: Vec<Vector3<f64>> = rows
        .iter()
        .map(|r| Vector3::new(r[ix], r[iy], r[iz]))
        .collect();
    match normal_idx {
        Some((a, b, c)) => {
            let normals = rows.iter().map(|r| Vector3::new(r[a], r[b], r[c])).collect();
            PointCloud::with_normals(points, normals, frame)
        }
        None => PointCloud::new(points, frame),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn ascii_roundtrip_with_normals() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let pts = vec![
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(-1.5, 2.25, 1e-7),
        ];
        let ns = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)];
        let cloud = PointCloud::with_normals(pts, ns, FrameId::base()).unwrap();
        write_ply(&path, &cloud).unwrap();
        let back = read_ply(&path, FrameId::base()).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.normals, cloud.normals);
    }

    #[test]
    fn binary_little_endian_read() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        );
        for v in [0.5f64, -1.0, 2.0, 3.0, 4.0, 5.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path, FrameId::base()).unwrap();
        assert_eq!(cloud.points[0], Vector3::new(0.5, -1.0, 2.0));
        assert_eq!(cloud.points[1], Vector3::new(3.0, 4.0, 5.0));
    }
}
