//! Parametric phantoms: flat calibration board, analytic sphere, and
//! superellipsoid chest height-field composites (male/female) lying on a bed
//! with arm structures and an optional spherical marker at the PMI.

use crate::error::{Error, Result};
use crate::simulator::mesh::{SemanticLabel, TriangleMesh};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Male,
    Female,
    Plate,
    Sphere,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Torso half extents (x across chest, y along body, z height), meters.
    pub torso_half_axes: [f64; 3],
    /// Superellipse exponent of the torso cross-section.
    pub superellipse_exponent: f64,
    /// Linear widening of the torso toward +y (shoulders), fraction of the
    /// x half axis at the torso end.
    pub taper: f64,
    /// Rib/sternum modulation amplitude (male variant), meters.
    pub rib_amplitude: f64,
    pub rib_period: f64,
    /// Quadratic rib spacing gradient along the body axis, dimensionless.
    /// Uneven spacing keeps a one-period shift from re-aligning the ribs.
    pub rib_chirp: f64,
    pub sternum_depth: f64,
    pub sternum_width: f64,
    /// Breast bump amplitude/sigma/offsets (female variant), meters.
    pub breast_amplitude: f64,
    pub breast_sigma: f64,
    pub breast_offset: [f64; 2],
    /// Torso center in the base frame (bed top is z = 0).
    pub center: [f64; 2],
    /// Height-field grid resolution (cells across the torso x extent).
    pub grid_cells: usize,
    /// Marker sphere radius; None disables the marker.
    pub marker_radius: Option<f64>,
    /// PMI offset from the torso center (x, y), meters.
    pub pmi_offset: [f64; 2],
    /// Include bed and arm structures.
    pub with_scene: bool,
    /// Plate width/height for PhantomKind::Plate, meters.
    pub plate_size: [f64; 2],
    /// Sphere radius for PhantomKind::Sphere, meters.
    pub sphere_radius: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            torso_half_axes: [0.17, 0.30, 0.11],
            superellipse_exponent: 2.5,
            taper: 0.12,
            rib_amplitude: 0.004,
            rib_period: 0.045,
            rib_chirp: 0.2,
            sternum_depth: 0.006,
            sternum_width: 0.025,
            breast_amplitude: 0.035,
            breast_sigma: 0.055,
            breast_offset: [0.075, 0.06],
            center: [0.55, 0.0],
            grid_cells: 96,
            marker_radius: None,
            pmi_offset: [-0.055, 0.04],
            with_scene: true,
            plate_size: [0.6, 0.9],
            sphere_radius: 0.015,
        }
    }
}

/// Generated phantom: labeled mesh plus analytic ground truth (PMI, marker
/// apex, surface height/normal for chest variants).
#[derive(Debug, Clone)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub params: PhantomParams,
    pub mesh: TriangleMesh,
    /// PMI on the chest surface (base frame); chest variants only.
    pub pmi: Option<Vector3<f64>>,
    /// Top point of the marker sphere; present when the marker is enabled.
    pub marker_apex: Option<Vector3<f64>>,
    pub marker_center: Option<Vector3<f64>>,
}

impl Phantom {
    /// Analytic chest height above the bed at base-frame (x, y); 0 outside
    /// the torso footprint. Chest variants only.
    pub fn chest_height(&self, x: f64, y: f64) -> Option<f64> {
        match self.kind {
            PhantomKind::Male | PhantomKind::Female => {
                Some(chest_height_field(&self.params, self.kind, x, y))
            }
            _ => None,
        }
    }

    /// Analytic outward (+z-facing) surface normal of the chest height field,
    /// from central differences of the analytic height function.
    pub fn chest_normal(&self, x: f64, y: f64) -> Option<Vector3<f64>> {
        let h = 1e-6;
        let zxp = self.chest_height(x + h, y)?;
        let zxm = self.chest_height(x - h, y)?;
        let zyp = self.chest_height(x, y + h)?;
        let zym = self.chest_height(x, y - h)?;
        let dzdx = (zxp - zxm) / (2.0 * h);
        let dzdy = (zyp - zym) / (2.0 * h);
        Some(Vector3::new(-dzdx, -dzdy, 1.0).normalize())
    }
}

fn superellipse_base(params: &PhantomParams, x: f64, y: f64) -> f64 {
    let [ax, ay, az] = params.torso_half_axes;
    let p = params.superellipse_exponent;
    // shoulders (+y) wider than the waist; the taper breaks the 180-degree
    // flip symmetry that otherwise aliases template alignment
    let ax = ax * (1.0 + params.taper * (y / ay).clamp(-1.0, 1.0));
    let s = (x / ax).abs().powf(p) + (y / ay).abs().powf(p);
    if s >= 1.0 {
        0.0
    } else {
        az * (1.0 - s).powf(1.0 / p)
    }
}

/// Chest height above the bed at torso-local offsets; (x, y) in base frame.
fn chest_height_field(params: &PhantomParams, kind: PhantomKind, x: f64, y: f64) -> f64 {
    let lx = x - params.center[0];
    let ly = y - params.center[1];
    let base = superellipse_base(params, lx, ly);
    if base <= 0.0 {
        return 0.0;
    }
    let az = params.torso_half_axes[2];
    // Modulations fade toward the torso edge so the outline stays smooth.
    let window = (base / az).min(1.0);
    let mut z = base;
    match kind {
        PhantomKind::Male => {
            // rib cage corrugation along the body axis + sternum groove
            let ay = params.torso_half_axes[1];
            let phase = (ly + params.rib_chirp * ly * ly / ay) / params.rib_period;
            let ribs = params.rib_amplitude * (std::f64::consts::TAU * phase).sin();
            let sternum =
                -params.sternum_depth * (-(lx / params.sternum_width).powi(2)).exp();
            z += (ribs + sternum) * window * window;
        }
        PhantomKind::Female => {
            let [bx, by] = params.breast_offset;
            let s2 = 2.0 * params.breast_sigma * params.breast_sigma;
            let bump = |cx: f64, cy: f64| {
                params.breast_amplitude
                    * (-((lx - cx).powi(2) + (ly - cy).powi(2)) / s2).exp()
            };
            z += (bump(bx, by) + bump(-bx, by)) * window;
        }
        _ => {}
    }
    z.max(0.0)
}

/// Deterministic icosphere.
pub fn icosphere(center: Vector3<f64>, radius: f64, subdivisions: usize, label: SemanticLabel) -> TriangleMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoints.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * 0.5).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mids[0], mids[2]]);
            new_faces.push([f[1], mids[1], mids[0]]);
            new_faces.push([f[2], mids[2], mids[1]]);
            new_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = new_faces;
    }
    let vertices: Vec<Vector3<f64>> = vertices.into_iter().map(|v| center + v * radius).collect();
    let labels = vec![label; faces.len()];
    TriangleMesh::new(vertices, faces, labels)
}

fn axis_aligned_quad(
    corner: Vector3<f64>,
    ex: Vector3<f64>,
    ey: Vector3<f64>,
    label: SemanticLabel,
) -> TriangleMesh {
    let vertices = vec![corner, corner + ex, corner + ex + ey, corner + ey];
    TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]], vec![label, label])
}

fn height_field_mesh(params: &PhantomParams, kind: PhantomKind) -> TriangleMesh {
    let [ax, ay, _] = params.torso_half_axes;
    let [cx, cy] = params.center;
    let nx = params.grid_cells;
    let ny = ((nx as f64) * ay / ax).round() as usize;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = cx - ax + 2.0 * ax * i as f64 / nx as f64;
            let y = cy - ay + 2.0 * ay * j as f64 / ny as f64;
            let z = chest_height_field(params, kind, x, y);
            vertices.push(Vector3::new(x, y, z));
        }
    }
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v0 = j * (nx + 1) + i;
            let v1 = v0 + 1;
            let v2 = v0 + nx + 2;
            let v3 = v0 + nx + 1;
            // wind so normals point up (+z)
            faces.push([v0, v1, v2]);
            faces.push([v0, v2, v3]);
        }
    }
    let labels = vec![SemanticLabel::Chest; faces.len()];
    TriangleMesh::new(vertices, faces, labels)
}

fn box_top(center: Vector3<f64>, half: Vector3<f64>, label: SemanticLabel) -> TriangleMesh {
    // Top face plus the two long side faces; enough for downward-looking scans.
    let c = center;
    let h = half;
    let top = axis_aligned_quad(
        Vector3::new(c.x - h.x, c.y - h.y, c.z + h.z),
        Vector3::new(2.0 * h.x, 0.0, 0.0),
        Vector3::new(0.0, 2.0 * h.y, 0.0),
        label,
    );
    let side1 = axis_aligned_quad(
        Vector3::new(c.x - h.x, c.y - h.y, c.z - h.z),
        Vector3::new(0.0, 2.0 * h.y, 0.0),
        Vector3::new(0.0, 0.0, 2.0 * h.z),
        label,
    );
    let side2 = axis_aligned_quad(
        Vector3::new(c.x + h.x, c.y - h.y, c.z - h.z),
        Vector3::new(0.0, 2.0 * h.y, 0.0),
        Vector3::new(0.0, 0.0, 2.0 * h.z),
        label,
    );
    TriangleMesh::merge(vec![top, side1, side2])
}

/// Builds the phantom mesh and analytic ground truth for the given kind.
pub fn generate_phantom(kind: PhantomKind, params: &PhantomParams) -> Result<Phantom> {
    validate(params)?;
    match kind {
        PhantomKind::Plate => {
            let [w, h] = params.plate_size;
            let [cx, cy] = params.center;
            let mesh = axis_aligned_quad(
                Vector3::new(cx - w / 2.0, cy - h / 2.0, 0.0),
                Vector3::new(w, 0.0, 0.0),
                Vector3::new(0.0, h, 0.0),
                SemanticLabel::Bed,
            );
            Ok(Phantom {
                kind,
                params: params.clone(),
                mesh,
                pmi: None,
                marker_apex: None,
                marker_center: None,
            })
        }
        PhantomKind::Sphere => {
            let mesh = icosphere(
                Vector3::new(params.center[0], params.center[1], 0.0),
                params.sphere_radius,
                4,
                SemanticLabel::Marker,
            );
            Ok(Phantom {
                kind,
                params: params.clone(),
                mesh,
                pmi: None,
                marker_apex: None,
                marker_center: None,
            })
        }
        PhantomKind::Male | PhantomKind::Female => {
            let mut parts = vec![height_field_mesh(params, kind)];
            let [cx, cy] = params.center;
            let [ax, _ay, _] = params.torso_half_axes;
            if params.with_scene {
                // bed top at z = 0
                parts.push(axis_aligned_quad(
                    Vector3::new(cx - 0.6, cy - 1.0, 0.0),
                    Vector3::new(1.2, 0.0, 0.0),
                    Vector3::new(0.0, 2.0, 0.0),
                    SemanticLabel::Bed,
                ));
                // arms alongside the torso
                for side in [-1.0, 1.0] {
                    parts.push(box_top(
                        Vector3::new(cx + side * (ax + 0.055), cy - 0.05, 0.03),
                        Vector3::new(0.04, 0.28, 0.03),
                        SemanticLabel::Arm,
                    ));
                }
            }
            let [px, py] = params.pmi_offset;
            let pmi_xy = (cx + px, cy + py);
            let pmi_z = chest_height_field(params, kind, pmi_xy.0, pmi_xy.1);
            let pmi = Vector3::new(pmi_xy.0, pmi_xy.1, pmi_z);

            let mut marker_apex = None;
            let mut marker_center = None;
            if let Some(r) = params.marker_radius {
                // marker rests on the surface along the local normal
                let tmp = Phantom {
                    kind,
                    params: params.clone(),
                    mesh: TriangleMesh::new(vec![], vec![], vec![]),
                    pmi: Some(pmi),
                    marker_apex: None,
                    marker_center: None,
                };
                let n = tmp.chest_normal(pmi.x, pmi.y).unwrap();
                let center = pmi + n * r;
                parts.push(icosphere(center, r, 3, SemanticLabel::Marker));
                marker_center = Some(center);
                marker_apex = Some(center + Vector3::new(0.0, 0.0, r));
            }
            Ok(Phantom {
                kind,
                params: params.clone(),
                mesh: TriangleMesh::merge(parts),
                pmi: Some(pmi),
                marker_apex,
                marker_center,
            })
        }
    }
}

fn validate(params: &PhantomParams) -> Result<()> {
    let [ax, ay, az] = params.torso_half_axes;
    if ax <= 0.0 || ay <= 0.0 || az <= 0.0 {
        return Err(Error::RejectedInput("torso half-axes must be positive".into()));
    }
    if params.superellipse_exponent < 1.0 {
        return Err(Error::RejectedInput(
            "superellipse exponent must be >= 1".into(),
        ));
    }
    if params.grid_cells < 8 {
        return Err(Error::RejectedInput("grid_cells too small".into()));
    }
    if let Some(r) = params.marker_radius {
        if r <= 0.0 {
            return Err(Error::RejectedInput("marker radius must be positive".into()));
        }
    }
    Ok(())
}
