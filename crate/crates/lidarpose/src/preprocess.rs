//! Point-cloud cleanup between sweep assembly and template matching:
//! downsampling, outlier removal, density clustering, implicit-surface
//! resampling, and normal estimation. Every stage is deterministic for
//! identical inputs and config.

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use nalgebra::{DVector, Matrix3, Vector3};
use std::collections::BTreeMap;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub voxel_size: f64,
    pub sor_k: usize,
    pub sor_std_ratio: f64,
    pub ror_radius: f64,
    pub ror_min_neighbors: usize,
    pub cluster_eps: f64,
    pub cluster_min_points: usize,
    /// Cells per axis along the longest bounding-box edge.
    pub grid_resolution: usize,
    /// Fractional bounding-box margin added on every side.
    pub grid_margin: f64,
    pub trim_distance: f64,
    pub normal_k: usize,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            voxel_size: 3e-3,
            sor_k: 20,
            sor_std_ratio: 2.0,
            ror_radius: 10e-3,
            ror_min_neighbors: 5,
            cluster_eps: 15e-3,
            cluster_min_points: 10,
            grid_resolution: 128,
            grid_margin: 0.10,
            trim_distance: 10e-3,
            normal_k: 30,
            cg_max_iterations: 2000,
            cg_tolerance: 1e-8,
        }
    }
}

/// One point per occupied voxel, at the centroid of its members. Output
/// ordered by voxel key, so the result is independent of input order up to
/// the centroid averaging order within a voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if voxel_size <= 0.0 {
        return Err(Error::RejectedInput(format!(
            "voxel_size must be > 0, got {voxel_size}"
        )));
    }
    if cloud.points.is_empty() {
        return Ok(PointCloud::new(Vec::new(), cloud.frame.clone())?);
    }
    let min = cloud
        .points
        .iter()
        .fold(cloud.points[0], |m, p| m.inf(p));
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            ((p.x - min.x) / voxel_size).floor() as i64,
            ((p.y - min.y) / voxel_size).floor() as i64,
            ((p.z - min.z) / voxel_size).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    let points = cells.values().map(|(sum, n)| sum / *n as f64).collect();
    PointCloud::new(points, cloud.frame.clone())
}

/// Removes points whose mean distance to their k nearest neighbors exceeds
/// the global mean by more than std_ratio standard deviations.
pub fn statistical_outlier_removal(
    cloud: &PointCloud,
    k: usize,
    std_ratio: f64,
) -> Result<PointCloud> {
    if cloud.points.len() <= k {
        return Err(Error::NotEnoughData(format!(
            "{} points, need more than k = {k}",
            cloud.points.len()
        )));
    }
    let tree = NeighborIndex::build(&cloud.points);
    let mean_dists: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            // nearest hit is the point itself (distance 0)
            let hits = tree.query(p, k + 1);
            let sum: f64 = hits.iter().skip(1).map(|h| h.1).sum();
            sum / k as f64
        })
        .collect();
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let cutoff = mean + std_ratio * var.sqrt();
    let keep: Vec<usize> = (0..cloud.points.len())
        .filter(|&i| mean_dists[i] <= cutoff)
        .collect();
    Ok(cloud.select(&keep))
}

/// Removes points with fewer than min_neighbors other points within radius.
pub fn radius_outlier_removal(
    cloud: &PointCloud,
    radius: f64,
    min_neighbors: usize,
) -> Result<PointCloud> {
    if cloud.points.is_empty() {
        return Ok(cloud.clone());
    }
    let tree = NeighborIndex::build(&cloud.points);
    let keep: Vec<usize> = (0..cloud.points.len())
        .filter(|&i| {
            let hits = tree.query_radius(&cloud.points[i], radius);
            // the query point itself is always among the hits
            hits.len() > min_neighbors
        })
        .collect();
    Ok(cloud.select(&keep))
}

/// DBSCAN over the eps-neighborhood graph. Clusters are returned largest
/// first (ties by smallest member index); noise is discarded. Border points
/// join the first cluster that reaches them, with seeds visited in
/// ascending index order.
pub fn density_cluster(
    cloud: &PointCloud,
    eps: f64,
    min_points: usize,
) -> Result<Vec<PointCloud>> {
    if eps <= 0.0 {
        return Err(Error::RejectedInput(format!("eps must be > 0, got {eps}")));
    }
    let n = cloud.points.len();
    let tree = NeighborIndex::build(&cloud.points);
    let neighborhoods: Vec<Vec<usize>> = cloud
        .points
        .iter()
        .map(|p| tree.query_radius(p, eps).iter().map(|h| h.0).collect())
        .collect();
    let labels = dbscan_labels(&neighborhoods, min_points, n);
    clusters_from_labels(cloud, &labels)
}

/// Core DBSCAN expansion given precomputed eps-neighborhoods. Shared by the
/// tree-based implementation and the brute-force oracle; label -1 is noise.
pub fn dbscan_labels(neighborhoods: &[Vec<usize>], min_points: usize, n: usize) -> Vec<i64> {
    let core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= min_points).collect();
    let mut labels = vec![-1i64; n];
    let mut cluster = 0i64;
    for seed in 0..n {
        if !core[seed] || labels[seed] >= 0 {
            continue;
        }
        labels[seed] = cluster;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighborhoods[i] {
                if labels[j] >= 0 {
                    continue;
                }
                labels[j] = cluster;
                if core[j] {
                    queue.push_back(j);
                }
            }
        }
        cluster += 1;
    }
    labels
}

fn clusters_from_labels(cloud: &PointCloud, labels: &[i64]) -> Result<Vec<PointCloud>> {
    let num_clusters = labels.iter().copied().max().unwrap_or(-1) + 1;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num_clusters as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups[l as usize].push(i);
        }
    }
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(groups.into_iter().map(|g| cloud.select(&g)).collect())
}

/// Per-point PCA normals over the k nearest neighbors, oriented toward the
/// viewpoint.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud> {
    if cloud.points.len() <= k {
        return Err(Error::NotEnoughData(format!(
            "{} points, need more than k = {k}",
            cloud.points.len()
        )));
    }
    let tree = NeighborIndex::build(&cloud.points);
    let mut normals = Vec::with_capacity(cloud.points.len());
    for p in &cloud.points {
        let hits = tree.query(p, k + 1);
        let centroid = hits
            .iter()
            .map(|h| cloud.points[h.0])
            .sum::<Vector3<f64>>()
            / hits.len() as f64;
        let mut cov = Matrix3::zeros();
        for h in &hits {
            let d = cloud.points[h.0] - centroid;
            cov += d * d.transpose();
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let min_idx = (0..3)
            .min_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
            .unwrap();
        let mut normal = eig.eigenvectors.column(min_idx).into_owned().normalize();
        if (viewpoint - p).dot(&normal) < 0.0 {
            normal = -normal;
        }
        normals.push(normal);
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}

/// Regular scalar grid with trilinear sampling.
pub struct ImplicitSurface {
    pub origin: Vector3<f64>,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub values: DVector<f64>,
}

impl ImplicitSurface {
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Trilinear interpolation; clamps to the grid interior.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let g = (p - self.origin) / self.spacing;
        let cl = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64 - 1e-9);
        let (gx, gy, gz) = (cl(g.x, self.dims[0]), cl(g.y, self.dims[1]), cl(g.z, self.dims[2]));
        let (i, j, k) = (gx as usize, gy as usize, gz as usize);
        let (fx, fy, fz) = (gx - i as f64, gy - j as f64, gz - k as f64);
        let mut acc = 0.0;
        for (di, wi) in [(0, 1.0 - fx), (1, fx)] {
            for (dj, wj) in [(0, 1.0 - fy), (1, fy)] {
                for (dk, wk) in [(0, 1.0 - fz), (1, fz)] {
                    acc += wi * wj * wk * self.values[self.idx(i + di, j + dj, k + dk)];
                }
            }
        }
        acc
    }
}

/// Solves the indicator problem laplacian(chi) = div(V) on a regular grid,
/// where V is the trilinearly splatted oriented-normal field, then resamples
/// the isosurface at the median indicator value of the input points and
/// discards samples farther than trim_distance from the input cloud.
pub fn poisson_reconstruct_and_trim(
    cloud: &PointCloud,
    cfg: &PreprocessConfig,
) -> Result<PointCloud> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    if cloud.points.is_empty() {
        return Err(Error::EmptyReconstruction);
    }

    let min = cloud.points.iter().fold(cloud.points[0], |m, p| m.inf(p));
    let max = cloud.points.iter().fold(cloud.points[0], |m, p| m.sup(p));
    let extent = max - min;
    let longest = extent.max().max(1e-6);
    let spacing = longest * (1.0 + 2.0 * cfg.grid_margin) / cfg.grid_resolution as f64;
    let pad = cfg.grid_margin * longest + 2.0 * spacing;
    let origin = min - Vector3::repeat(pad);
    let dims = [
        ((extent.x + 2.0 * pad) / spacing).ceil() as usize + 1,
        ((extent.y + 2.0 * pad) / spacing).ceil() as usize + 1,
        ((extent.z + 2.0 * pad) / spacing).ceil() as usize + 1,
    ];
    let total = dims[0] * dims[1] * dims[2];
    let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;

    // splat oriented normals, then take the divergence as the source term
    let mut vfield = vec![Vector3::<f64>::zeros(); total];
    for (p, nrm) in cloud.points.iter().zip(normals) {
        let g = (p - origin) / spacing;
        let (i, j, k) = (g.x as usize, g.y as usize, g.z as usize);
        let (fx, fy, fz) = (g.x - i as f64, g.y - j as f64, g.z - k as f64);
        for (di, wi) in [(0, 1.0 - fx), (1, fx)] {
            for (dj, wj) in [(0, 1.0 - fy), (1, fy)] {
                for (dk, wk) in [(0, 1.0 - fz), (1, fz)] {
                    vfield[idx(i + di, j + dj, k + dk)] += wi * wj * wk * nrm;
                }
            }
        }
    }
    let mut b = DVector::zeros(total);
    for i in 1..dims[0] - 1 {
        for j in 1..dims[1] - 1 {
            for k in 1..dims[2] - 1 {
                let div = (vfield[idx(i + 1, j, k)].x - vfield[idx(i - 1, j, k)].x
                    + vfield[idx(i, j + 1, k)].y
                    - vfield[idx(i, j - 1, k)].y
                    + vfield[idx(i, j, k + 1)].z
                    - vfield[idx(i, j, k - 1)].z)
                    / (2.0 * spacing);
                b[idx(i, j, k)] = div;
            }
        }
    }
    drop(vfield);

    // conjugate gradient on -laplacian(chi) = -b with zero Dirichlet boundary
    let s2 = spacing * spacing;
    let apply = |x: &DVector<f64>, y: &mut DVector<f64>| {
        y.fill(0.0);
        for i in 1..dims[0] - 1 {
            for j in 1..dims[1] - 1 {
                for k in 1..dims[2] - 1 {
                    let c = idx(i, j, k);
                    y[c] = (6.0 * x[c]
                        - x[idx(i - 1, j, k)]
                        - x[idx(i + 1, j, k)]
                        - x[idx(i, j - 1, k)]
                        - x[idx(i, j + 1, k)]
                        - x[idx(i, j, k - 1)]
                        - x[idx(i, j, k + 1)])
                        / s2;
                }
            }
        }
    };
    let rhs = -b;
    let mut chi = DVector::zeros(total);
    let mut residual = rhs.clone();
    let mut dir = residual.clone();
    let mut az = DVector::zeros(total);
    let rhs_norm = rhs.norm().max(1e-300);
    let mut rr = residual.dot(&residual);
    let mut converged = rr.sqrt() / rhs_norm <= cfg.cg_tolerance;
    for _ in 0..cfg.cg_max_iterations {
        if converged {
            break;
        }
        apply(&dir, &mut az);
        let alpha = rr / dir.dot(&az);
        chi.axpy(alpha, &dir, 1.0);
        residual.axpy(-alpha, &az, 1.0);
        let rr_new = residual.dot(&residual);
        if rr_new.sqrt() / rhs_norm <= cfg.cg_tolerance {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        dir = &residual + beta * &dir;
    }
    if !converged {
        return Err(Error::SolverFailure(format!(
            "indicator solve did not converge in {} iterations",
            cfg.cg_max_iterations
        )));
    }

    let surface = ImplicitSurface {
        origin,
        spacing,
        dims,
        values: chi,
    };

    // isosurface level: median indicator value over the input samples
    let mut at_points: Vec<f64> = cloud.points.iter().map(|p| surface.sample(p)).collect();
    at_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = at_points.len();
    let iso = if m % 2 == 1 {
        at_points[m / 2]
    } else {
        0.5 * (at_points[m / 2 - 1] + at_points[m / 2])
    };

    // edge crossings of the iso level, in grid order
    let mut out = Vec::new();
    let val = |i: usize, j: usize, k: usize| surface.values[idx(i, j, k)];
    let node = |i: usize, j: usize, k: usize| {
        origin + spacing * Vector3::new(i as f64, j as f64, k as f64)
    };
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let a = val(i, j, k) - iso;
                let mut cross = |bv: f64, other: Vector3<f64>| {
                    let bd = bv - iso;
                    if (a < 0.0) != (bd < 0.0) {
                        let t = a / (a - bd);
                        let p0 = node(i, j, k);
                        out.push(p0 + t * (other - p0));
                    }
                };
                if i + 1 < dims[0] {
                    cross(val(i + 1, j, k), node(i + 1, j, k));
                }
                if j + 1 < dims[1] {
                    cross(val(i, j + 1, k), node(i, j + 1, k));
                }
                if k + 1 < dims[2] {
                    cross(val(i, j, k + 1), node(i, j, k + 1));
                }
            }
        }
    }

    // signed-distance trimming against the input cloud
    let tree = NeighborIndex::build(&cloud.points);
    let trimmed: Vec<Vector3<f64>> = out
        .into_iter()
        .filter(|p| {
            let hit = tree.query(p, 1);
            hit[0].1 <= cfg.trim_distance
        })
        .collect();
    if trimmed.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    PointCloud::new(trimmed, cloud.frame.clone())
}

/// Full chain: downsample, statistical and radius outlier removal, keep the
/// largest density cluster, estimate normals, implicit-surface resampling
/// with trimming, then re-estimate normals on the resampled cloud.
pub fn preprocess_pipeline(
    raw: &PointCloud,
    cfg: &PreprocessConfig,
    viewpoint: &Vector3<f64>,
) -> Result<PointCloud> {
    if raw.points.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    let down = voxel_downsample(raw, cfg.voxel_size)?;
    let sor = statistical_outlier_removal(&down, cfg.sor_k, cfg.sor_std_ratio)?;
    let ror = radius_outlier_removal(&sor, cfg.ror_radius, cfg.ror_min_neighbors)?;
    let clusters = density_cluster(&ror, cfg.cluster_eps, cfg.cluster_min_points)?;
    let body = clusters.into_iter().next().ok_or(Error::EmptyReconstruction)?;
    let with_normals = estimate_normals(&body, cfg.normal_k, viewpoint)?;
    let surface = poisson_reconstruct_and_trim(&with_normals, cfg)?;
    estimate_normals(&surface, cfg.normal_k, viewpoint)
}
