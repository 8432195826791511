//! Triangle meshes with per-face semantic labels, ray casting via
//! Moller-Trumbore, and a median-split BVH for larger meshes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticLabel {
    Chest,
    Arm,
    Bed,
    Marker,
}

impl SemanticLabel {
    pub fn name(&self) -> &'static str {
        match self {
            SemanticLabel::Chest => "chest",
            SemanticLabel::Arm => "arm",
            SemanticLabel::Bed => "bed",
            SemanticLabel::Marker => "marker",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Vec<SemanticLabel>,
}

#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub distance: f64,
    pub face: usize,
    pub point: Vector3<f64>,
}

const BVH_THRESHOLD: usize = 10_000;

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        labels: Vec<SemanticLabel>,
    ) -> Self {
        assert_eq!(faces.len(), labels.len(), "labels must cover all faces");
        TriangleMesh {
            vertices,
            faces,
            labels,
        }
    }

    pub fn merge(meshes: Vec<TriangleMesh>) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut labels = Vec::new();
        for m in meshes {
            let base = vertices.len();
            vertices.extend(m.vertices);
            faces.extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            labels.extend(m.labels);
        }
        TriangleMesh::new(vertices, faces, labels)
    }

    pub fn face_vertices(&self, face: usize) -> [Vector3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_vertices(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Deterministic dense sampling of the surface: each face is covered by a
    /// barycentric grid sized to the requested spacing. Returns points with
    /// their face labels and normals.
    pub fn sample_surface(&self, spacing: f64) -> Vec<(Vector3<f64>, Vector3<f64>, SemanticLabel)> {
        let mut out = Vec::new();
        for (fi, _) in self.faces.iter().enumerate() {
            let [a, b, c] = self.face_vertices(fi);
            let n = self.face_normal(fi);
            let label = self.labels[fi];
            let max_edge = (b - a).norm().max((c - a).norm()).max((c - b).norm());
            let steps = ((max_edge / spacing).ceil() as usize).max(1);
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let u = i as f64 / steps as f64;
                    let v = j as f64 / steps as f64;
                    let w = 1.0 - u - v;
                    out.push((a * w + b * u + c * v, n, label));
                }
            }
        }
        out
    }
}

/// Moller-Trumbore ray/triangle intersection. Returns the ray parameter t
/// (distance for unit direction) if the ray hits the triangle at t > eps.
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv_det;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    if t > 1e-9 {
        Some(t)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow_point(&mut self, p: &Vector3<f64>) {
        for i in 0..3 {
            self.lo[i] = self.lo[i].min(p[i]);
            self.hi[i] = self.hi[i].max(p[i]);
        }
    }

    /// Slab test; returns entry distance if the ray intersects within max_t.
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, max_t: f64) -> bool {
        let mut tmin = 0.0f64;
        let mut tmax = max_t;
        for i in 0..3 {
            let t1 = (self.lo[i] - origin[i]) * inv_dir[i];
            let t2 = (self.hi[i] - origin[i]) * inv_dir[i];
            let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
            if tmin > tmax {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf {
        bbox: Aabb,
        faces: Vec<usize>,
    },
    Inner {
        bbox: Aabb,
        left: Box<BvhNode>,
        right: Box<BvhNode>,
    },
}

/// Ray caster: BVH-accelerated above 10k faces, brute force below.
#[derive(Debug)]
pub struct RayCaster<'a> {
    mesh: &'a TriangleMesh,
    bvh: Option<BvhNode>,
}

impl<'a> RayCaster<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let bvh = if mesh.faces.len() > BVH_THRESHOLD {
            let indices: Vec<usize> = (0..mesh.faces.len()).collect();
            Some(build_bvh(mesh, indices))
        } else {
            None
        };
        RayCaster { mesh, bvh }
    }

    /// Nearest intersection along a unit-direction ray, within max_range.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        match &self.bvh {
            None => {
                for fi in 0..self.mesh.faces.len() {
                    let [a, b, c] = self.mesh.face_vertices(fi);
                    if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                        if t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
                            best = Some((t, fi));
                        }
                    }
                }
            }
            Some(root) => {
                let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
                cast_bvh(self.mesh, root, origin, dir, &inv_dir, max_range, &mut best);
            }
        }
        best.map(|(t, face)| RayHit {
            distance: t,
            face,
            point: origin + dir * t,
        })
    }
}

fn build_bvh(mesh: &TriangleMesh, mut indices: Vec<usize>) -> BvhNode {
    let mut bbox = Aabb::empty();
    for &fi in &indices {
        for v in mesh.face_vertices(fi) {
            bbox.grow_point(&v);
        }
    }
    if indices.len() <= 8 {
        return BvhNode::Leaf { bbox, faces: indices };
    }
    // split on widest axis at the centroid median
    let extent = bbox.hi - bbox.lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let centroid = |fi: usize| -> f64 {
        let [a, b, c] = mesh.face_vertices(fi);
        (a[axis] + b[axis] + c[axis]) / 3.0
    };
    indices.sort_by(|&x, &y| {
        centroid(x)
            .partial_cmp(&centroid(y))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mid = indices.len() / 2;
    let right_idx = indices.split_off(mid);
    BvhNode::Inner {
        bbox,
        left: Box::new(build_bvh(mesh, indices)),
        right: Box::new(build_bvh(mesh, right_idx)),
    }
}

fn cast_bvh(
    mesh: &TriangleMesh,
    node: &BvhNode,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    inv_dir: &Vector3<f64>,
    max_range: f64,
    best: &mut Option<(f64, usize)>,
) {
    let current_max = best.map_or(max_range, |(t, _)| t.min(max_range));
    match node {
        BvhNode::Leaf { bbox, faces } => {
            if !bbox.hit(origin, inv_dir, current_max) {
                return;
            }
            for &fi in faces {
                let [a, b, c] = mesh.face_vertices(fi);
                if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                    if t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
                        *best = Some((t, fi));
                    }
                }
            }
        }
        BvhNode::Inner { bbox, left, right } => {
            if !bbox.hit(origin, inv_dir, current_max) {
                return;
            }
            cast_bvh(mesh, left, origin, dir, inv_dir, max_range, best);
            cast_bvh(mesh, right, origin, dir, inv_dir, max_range, best);
        }
    }
}

/// Brute-force all-triangle caster, kept as the exactness oracle for tests.
pub fn brute_force_cast(
    mesh: &TriangleMesh,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    max_range: f64,
) -> Option<RayHit> {
    let mut best: Option<(f64, usize)> = None;
    for fi in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_vertices(fi);
        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
            if t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, fi));
            }
        }
    }
    best.map(|(t, face)| RayHit {
        distance: t,
        face,
        point: origin + dir * t,
    })
}
