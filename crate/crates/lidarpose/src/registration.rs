//! Template matching against the reconstructed chest surface: uniform-scale
//! variant generation, FPFH features, correspondence-based global alignment,
//! point-to-plane ICP refinement, a fitness-gated enlarge/shrink loop, and
//! transfer of the annotated probe point with a PCA surface normal.

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud, RigidTransform, RotationVector};
use crate::preprocess::{estimate_normals, voxel_downsample};
use crate::simulator::beam_rng;
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexVariant {
    Male,
    Female,
}

/// Annotated reference surface for matching.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub cloud: PointCloud,
    /// Ideal probe point in the template frame.
    pub probe_point: Vector3<f64>,
    pub sex_variant: SexVariant,
    pub name: String,
}

impl TemplateModel {
    /// `anchor_tolerance` bounds how far probe_point may sit from the
    /// nearest template point (nominally 2x the preprocessing voxel size).
    pub fn new(
        cloud: PointCloud,
        probe_point: Vector3<f64>,
        sex_variant: SexVariant,
        name: String,
        anchor_tolerance: f64,
    ) -> Result<Self> {
        let tree = NeighborIndex::build(&cloud.points);
        let nearest = tree
            .query(&probe_point, 1)
            .first()
            .map(|h| h.1)
            .ok_or(Error::EmptyReconstruction)?;
        if nearest > anchor_tolerance {
            return Err(Error::RejectedInput(format!(
                "probe point {nearest:.4} m from the nearest template point, allowed {anchor_tolerance}"
            )));
        }
        Ok(TemplateModel {
            cloud,
            probe_point,
            sex_variant,
            name,
        })
    }
}

/// Template scaled uniformly about its centroid.
#[derive(Debug, Clone)]
pub struct ScaleVariant {
    pub scale: f64,
    pub cloud: PointCloud,
    pub probe_point: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct RegistrationOutcome {
    /// template -> target frame.
    pub transform: RigidTransform,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub scale_used: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ProbePose {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub approach_direction: Vector3<f64>,
    pub outcome: RegistrationOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub fpfh_radius: f64,
    /// Voxel size applied to both clouds before feature matching.
    pub feature_voxel: f64,
    pub feature_normal_k: usize,
    pub tuple_test_ratio: f64,
    pub tuple_tests: usize,
    pub min_correspondences: usize,
    pub fgr_iterations: usize,
    pub fgr_div_factor: f64,
    /// Tuple-test reseeds per coarse alignment; the keep-set is small enough
    /// that a single draw can miss the consistent correspondence core.
    pub fgr_restarts: usize,
    /// Correspondence / fitness distance, meters.
    pub tau_fit: f64,
    pub icp_max_iterations: usize,
    pub icp_delta: f64,
    pub fitness_threshold: f64,
    pub scale_step: f64,
    pub scale_bounds: (f64, f64),
    pub max_variants: usize,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            fpfh_radius: 50e-3,
            feature_voxel: 5e-3,
            feature_normal_k: 15,
            tuple_test_ratio: 0.9,
            tuple_tests: 1000,
            min_correspondences: 10,
            fgr_iterations: 64,
            fgr_div_factor: 1.4,
            fgr_restarts: 4,
            tau_fit: 10e-3,
            icp_max_iterations: 50,
            icp_delta: 1e-8,
            fitness_threshold: 0.90,
            scale_step: 0.1,
            scale_bounds: (0.6, 1.4),
            max_variants: 8,
            seed: 0,
        }
    }
}

/// Uniform scale about the template centroid; the probe point follows.
pub fn scale_template(template: &TemplateModel, factor: f64) -> Result<ScaleVariant> {
    if factor <= 0.0 {
        return Err(Error::RejectedInput(format!(
            "scale factor must be > 0, got {factor}"
        )));
    }
    let c = template.cloud.centroid();
    let points = template
        .cloud
        .points
        .iter()
        .map(|p| c + factor * (p - c))
        .collect();
    let mut cloud = PointCloud::new(points, template.cloud.frame.clone())?;
    // unit normals are invariant under uniform scaling
    cloud.normals = template.cloud.normals.clone();
    Ok(ScaleVariant {
        scale: factor,
        cloud,
        probe_point: c + factor * (template.probe_point - c),
    })
}

pub const FPFH_BINS: usize = 33;

/// Simplified point feature histogram for one point: 11 raw-count bins for
/// each of the three Darboux angles over the radius neighborhood.
fn spfh(
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    neighbors: &[usize],
    i: usize,
) -> [f64; FPFH_BINS] {
    let mut h = [0.0; FPFH_BINS];
    let p_i = points[i];
    let n_i = normals[i];
    for &j in neighbors {
        let d = points[j] - p_i;
        let dist = d.norm();
        if dist < 1e-12 {
            continue;
        }
        let dir = d / dist;
        let u = n_i;
        let v_raw = dir.cross(&u);
        let v_norm = v_raw.norm();
        // degenerate Darboux frame when the displacement is parallel to the
        // normal; fall back to an arbitrary perpendicular
        let v = if v_norm > 1e-9 {
            v_raw / v_norm
        } else {
            let alt = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            u.cross(&alt).normalize()
        };
        let w = u.cross(&v);
        let n_j = normals[j];
        let alpha = v.dot(&n_j).clamp(-1.0, 1.0);
        let phi = u.dot(&dir).clamp(-1.0, 1.0);
        let theta = w.dot(&n_j).atan2(u.dot(&n_j));
        let bin = |x: f64, lo: f64, hi: f64| -> usize {
            (((x - lo) / (hi - lo) * 11.0) as usize).min(10)
        };
        h[bin(alpha, -1.0, 1.0)] += 1.0;
        h[11 + bin(phi, -1.0, 1.0)] += 1.0;
        h[22 + bin(theta, -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
    }
    h
}

/// Raw SPFH histograms; exposed for the histogram-sum property checks.
pub fn compute_spfh(cloud: &PointCloud, radius: f64) -> Result<Vec<[f64; FPFH_BINS]>> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    let tree = NeighborIndex::build(&cloud.points);
    let out = (0..cloud.points.len())
        .map(|i| {
            let neighbors: Vec<usize> = tree
                .query_radius(&cloud.points[i], radius)
                .into_iter()
                .map(|h| h.0)
                .filter(|&j| j != i)
                .collect();
            spfh(&cloud.points, normals, &neighbors, i)
        })
        .collect();
    Ok(out)
}

/// FPFH per point: own SPFH plus neighbor SPFHs weighted by inverse
/// distance, normalized to unit sum for scale-free matching.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<Vec<[f64; FPFH_BINS]>> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    let tree = NeighborIndex::build(&cloud.points);
    let neighborhoods: Vec<Vec<(usize, f64)>> = (0..cloud.points.len())
        .map(|i| {
            tree.query_radius(&cloud.points[i], radius)
                .into_iter()
                .filter(|h| h.0 != i)
                .collect()
        })
        .collect();
    let spfhs: Vec<[f64; FPFH_BINS]> = (0..cloud.points.len())
        .map(|i| {
            let ids: Vec<usize> = neighborhoods[i].iter().map(|h| h.0).collect();
            spfh(&cloud.points, normals, &ids, i)
        })
        .collect();
    let mut out = Vec::with_capacity(cloud.points.len());
    for i in 0..cloud.points.len() {
        let mut f = spfhs[i];
        let k = neighborhoods[i].len();
        if k > 0 {
            for &(j, dist) in &neighborhoods[i] {
                let w = 1.0 / dist.max(1e-9) / k as f64;
                for b in 0..FPFH_BINS {
                    f[b] += w * spfhs[j][b];
                }
            }
        }
        let sum: f64 = f.iter().sum();
        if sum > 0.0 {
            for b in f.iter_mut() {
                *b /= sum;
            }
        }
        out.push(f);
    }
    Ok(out)
}

fn feature_dist2(a: &[f64; FPFH_BINS], b: &[f64; FPFH_BINS]) -> f64 {
    let mut s = 0.0;
    for i in 0..FPFH_BINS {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn nearest_feature(query: &[f64; FPFH_BINS], set: &[[f64; FPFH_BINS]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, f) in set.iter().enumerate() {
        let d = feature_dist2(query, f);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Weighted rigid alignment of paired points (Kabsch), source -> target.
fn weighted_rigid_fit(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    weights: &[f64],
) -> (Matrix3<f64>, Vector3<f64>) {
    let wsum: f64 = weights.iter().sum();
    let mut cp = Vector3::zeros();
    let mut cq = Vector3::zeros();
    for ((p, q), &w) in pairs.iter().zip(weights) {
        cp += w * p;
        cq += w * q;
    }
    cp /= wsum;
    cq /= wsum;
    let mut h = Matrix3::zeros();
    for ((p, q), &w) in pairs.iter().zip(weights) {
        h += w * (p - cp) * (q - cq).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let t = cq - r * cp;
    (r, t)
}

/// Coarse global alignment from FPFH correspondences: mutual-nearest
/// matching, tuple test, then graduated non-convexity over a scaled
/// Geman-McClure cost on correspondence distances.
pub fn fast_global_registration(
    source: &PointCloud,
    source_features: &[[f64; FPFH_BINS]],
    target: &PointCloud,
    target_features: &[[f64; FPFH_BINS]],
    cfg: &RegistrationConfig,
) -> Result<RigidTransform> {
    if source.points.len() < 100 || target.points.len() < 100 {
        return Err(Error::NotEnoughData(
            "global registration needs >= 100 points per cloud".into(),
        ));
    }
    // mutual nearest neighbors in feature space
    let fwd: Vec<usize> = source_features
        .iter()
        .map(|f| nearest_feature(f, target_features))
        .collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (si, &ti) in fwd.iter().enumerate() {
        if nearest_feature(&target_features[ti], source_features) == si {
            pairs.push((si, ti));
        }
    }

    // one coarse hypothesis per reseed of the tuple test; the winner is the
    // one placing the most source points within tau_fit of the target
    let bbox_min = target.points.iter().fold(target.points[0], |m, p| m.inf(p));
    let bbox_max = target.points.iter().fold(target.points[0], |m, p| m.sup(p));
    let mu_start = (bbox_max - bbox_min).norm_squared();
    let mu_floor = cfg.feature_voxel * cfg.feature_voxel;
    let tree = NeighborIndex::build(&target.points);

    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    let mut max_corr = 0usize;
    for restart in 0..cfg.fgr_restarts.max(1) {
        // tuple test: keep correspondences that participate in a
        // geometrically consistent random triple
        let mut keep = vec![false; pairs.len()];
        if pairs.len() >= 3 {
            let ratio = cfg.tuple_test_ratio;
            let salt = cfg.seed.wrapping_add((restart as u64).wrapping_mul(0x9e3779b97f4a7c15));
            for trial in 0..cfg.tuple_tests {
                let mut rng = beam_rng(salt, 0x7a91e, trial as u64);
                let a = rng.gen_range(0..pairs.len());
                let b = rng.gen_range(0..pairs.len());
                let c = rng.gen_range(0..pairs.len());
                if a == b || b == c || a == c {
                    continue;
                }
                let ok = [(a, b), (b, c), (a, c)].iter().all(|&(x, y)| {
                    let ds = (source.points[pairs[x].0] - source.points[pairs[y].0]).norm();
                    let dt = (target.points[pairs[x].1] - target.points[pairs[y].1]).norm();
                    dt > 1e-12 && ds > 1e-12 && ds / dt > ratio && ds / dt < 1.0 / ratio
                });
                if ok {
                    keep[a] = true;
                    keep[b] = true;
                    keep[c] = true;
                }
            }
        }
        let corr: Vec<(Vector3<f64>, Vector3<f64>)> = pairs
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&(s, t), _)| (source.points[s], target.points[t]))
            .collect();
        max_corr = max_corr.max(corr.len());
        if corr.len() < cfg.min_correspondences {
            continue;
        }

        // GNC on scaled Geman-McClure: mu anneals from the squared target
        // diameter down to the feature voxel scale
        let mut mu = mu_start;
        let mut rot = Matrix3::identity();
        let mut trans = Vector3::zeros();
        let mut weights = vec![1.0; corr.len()];
        for it in 0..cfg.fgr_iterations {
            let moved: Vec<(Vector3<f64>, Vector3<f64>)> = corr
                .iter()
                .map(|(p, q)| (rot * p + trans, *q))
                .collect();
            for (w, (p, q)) in weights.iter_mut().zip(&moved) {
                let r2 = (p - q).norm_squared();
                let lw = mu / (mu + r2);
                *w = lw * lw;
            }
            let (dr, dt) = weighted_rigid_fit(&moved, &weights);
            rot = dr * rot;
            trans = dr * trans + dt;
            if it % 4 == 3 && mu > mu_floor {
                mu = (mu / cfg.fgr_div_factor).max(mu_floor);
            }
        }
        let inliers = source
            .points
            .iter()
            .filter(|p| {
                let tp = rot * *p + trans;
                tree.query(&tp, 1)[0].1 <= cfg.tau_fit
            })
            .count();
        if best.as_ref().map(|(n, _, _)| inliers > *n).unwrap_or(true) {
            best = Some((inliers, rot, trans));
        }
    }
    let Some((_, rot, trans)) = best else {
        return Err(Error::RegistrationFailure(format!(
            "{max_corr} correspondences after filtering, need >= {}",
            cfg.min_correspondences
        )));
    };
    RigidTransform::new(
        rot,
        trans,
        source.frame.clone(),
        target.frame.clone(),
    )
}

/// Correspondences of the transformed source against the target within
/// tau_fit, as (source_index, target_index, distance).
fn correspondences(
    source: &PointCloud,
    tree: &NeighborIndex,
    transform: &RigidTransform,
    tau: f64,
) -> Vec<(usize, usize, f64)> {
    source
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let tp = transform.rotation * p + transform.translation;
            let (j, d) = *tree.query(&tp, 1).first()?;
            (d <= tau).then_some((i, j, d))
        })
        .collect()
}

/// Point-to-plane ICP: iterates nearest-neighbor matching within tau_fit and
/// a linearized 6-DoF update until the step norm drops below icp_delta.
/// Fitness is the matched fraction of the source; inlier RMSE is the
/// Euclidean residual over matched pairs at the final transform.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    let target_normals = target.normals.as_ref().ok_or(Error::MissingNormals)?;
    let tree = NeighborIndex::build(&target.points);
    let mut transform = init.clone();
    let mut iterations_used = 0;
    for it in 0..cfg.icp_max_iterations {
        iterations_used = it + 1;
        let matches = correspondences(source, &tree, &transform, cfg.tau_fit);
        if matches.is_empty() {
            return Err(Error::RegistrationFailure(
                "no correspondences within tau_fit".into(),
            ));
        }
        // linearized point-to-plane normal equations
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &(i, j, _) in &matches {
            let p = transform.rotation * source.points[i] + transform.translation;
            let q = target.points[j];
            let n = target_normals[j];
            let r = n.dot(&(p - q));
            let mut jrow = Vector6::zeros();
            let pxn = p.cross(&n);
            for c in 0..3 {
                jrow[c] = pxn[c];
                jrow[3 + c] = n[c];
            }
            a += jrow * jrow.transpose();
            g += jrow * r;
        }
        let delta = match a.cholesky() {
            Some(ch) => ch.solve(&(-g)),
            None => a
                .lu()
                .solve(&(-g))
                .ok_or_else(|| Error::SolverFailure("singular ICP system".into()))?,
        };
        let omega = RotationVector::new(Vector3::new(delta[0], delta[1], delta[2]));
        let drot = omega.exp();
        let dtrans = Vector3::new(delta[3], delta[4], delta[5]);
        transform = RigidTransform::new(
            drot * transform.rotation,
            drot * transform.translation + dtrans,
            transform.from_frame.clone(),
            transform.to_frame.clone(),
        )?;
        if delta.norm() < cfg.icp_delta {
            break;
        }
    }
    let matches = correspondences(source, &tree, &transform, cfg.tau_fit);
    if matches.is_empty() {
        return Err(Error::RegistrationFailure(
            "no correspondences at the refined transform".into(),
        ));
    }
    let fitness = matches.len() as f64 / source.points.len() as f64;
    let inlier_rmse = (matches.iter().map(|&(_, _, d)| d * d).sum::<f64>()
        / matches.len() as f64)
        .sqrt();
    Ok(RegistrationOutcome {
        transform,
        fitness,
        inlier_rmse,
        scale_used: 1.0,
        iterations_used,
        converged: true,
    })
}

/// Brute-force fitness/RMSE evaluator: double loop over both clouds. The
/// tree-backed fitness must reproduce this exactly.
pub fn brute_force_fitness(
    source: &PointCloud,
    target: &PointCloud,
    transform: &RigidTransform,
    tau: f64,
) -> (f64, f64) {
    let mut matched = 0usize;
    let mut sum2 = 0.0;
    for p in &source.points {
        let tp = transform.rotation * p + transform.translation;
        let mut best = f64::INFINITY;
        for q in &target.points {
            let d2 = (tp - q).norm_squared();
            if d2 < best {
                best = d2;
            }
        }
        let d = best.sqrt();
        if d <= tau {
            matched += 1;
            sum2 += d * d;
        }
    }
    if matched == 0 {
        return (0.0, 0.0);
    }
    (
        matched as f64 / source.points.len() as f64,
        (sum2 / matched as f64).sqrt(),
    )
}

/// Registers one scale variant: feature-space global alignment on
/// downsampled copies, then ICP on the full clouds. The target's downsampled
/// cloud and features are variant-independent and supplied by the caller.
fn register_variant(
    variant: &ScaleVariant,
    target: &PointCloud,
    tgt_down: &PointCloud,
    tgt_feat: &[[f64; FPFH_BINS]],
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    let src_down = {
        let d = voxel_downsample(&variant.cloud, cfg.feature_voxel)?;
        estimate_normals(&d, cfg.feature_normal_k, &(d.centroid() + Vector3::z()))?
    };
    let src_feat = compute_fpfh(&src_down, cfg.fpfh_radius)?;
    let coarse = fast_global_registration(&src_down, &src_feat, tgt_down, tgt_feat, cfg)?;
    let mut outcome = icp_refine(&variant.cloud, target, &coarse, cfg)?;
    outcome.scale_used = variant.scale;
    outcome.converged = outcome.fitness >= cfg.fitness_threshold;
    Ok(outcome)
}

/// Scale loop: tries {1.0, 1.1, 0.9}; if none qualifies, steps the
/// better-scoring direction in 10% increments until the fitness gate, the
/// scale bounds, or the variant cap is hit. While the best qualifying scale
/// sits at the outer edge of the tried range the loop keeps stepping outward
/// as long as fitness improves, so an oversized or undersized target settles
/// on its nearest 10% step instead of the first passing neighbor. Returns the
/// best outcome (ties broken toward the scale nearest 1.0), flagged
/// unconverged if the gate was never met.
pub fn match_with_scale_loop(
    template: &TemplateModel,
    target: &PointCloud,
    viewpoint: &Vector3<f64>,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    let tgt_down = {
        let d = voxel_downsample(target, cfg.feature_voxel)?;
        estimate_normals(&d, cfg.feature_normal_k, viewpoint)?
    };
    let tgt_feat = compute_fpfh(&tgt_down, cfg.fpfh_radius)?;
    let mut tried: Vec<RegistrationOutcome> = Vec::new();
    let run = |scale: f64, tried: &mut Vec<RegistrationOutcome>| -> Result<()> {
        let variant = scale_template(template, scale)?;
        match register_variant(&variant, target, &tgt_down, &tgt_feat, cfg) {
            Ok(outcome) => {
                tried.push(outcome);
                Ok(())
            }
            Err(Error::RegistrationFailure(_)) | Err(Error::NotEnoughData(_)) => Ok(()),
            Err(e) => Err(e),
        }
    };
    for &scale in &[1.0, 1.1, 0.9] {
        run(scale, &mut tried)?;
    }
    let better = |a: &RegistrationOutcome, b: &RegistrationOutcome| {
        // higher fitness wins; ties go to the scale nearest 1.0
        a.fitness
            .partial_cmp(&b.fitness)
            .unwrap()
            .then(
                (b.scale_used - 1.0)
                    .abs()
                    .partial_cmp(&(a.scale_used - 1.0).abs())
                    .unwrap(),
            )
    };
    let qualifies = |o: &RegistrationOutcome| o.fitness >= cfg.fitness_threshold;

    if !tried.iter().any(qualifies) && !tried.is_empty() {
        let best = tried.iter().max_by(|a, b| better(a, b)).unwrap();
        let direction = if best.scale_used >= 1.0 { 1.0 } else { -1.0 };
        let mut scale = if direction > 0.0 { 1.1 } else { 0.9 };
        while tried.len() < cfg.max_variants {
            scale += direction * cfg.scale_step;
            if scale < cfg.scale_bounds.0 - 1e-9 || scale > cfg.scale_bounds.1 + 1e-9 {
                break;
            }
            run(scale, &mut tried)?;
            if tried.last().map(qualifies).unwrap_or(false) {
                break;
            }
        }
    }

    // hill climb outward while the best qualifying variant is the outermost
    // scale tried in its direction and the next step keeps improving
    loop {
        let Some(best) = tried
            .iter()
            .filter(|o| qualifies(o))
            .max_by(|a, b| better(a, b))
            .cloned()
        else {
            break;
        };
        if tried.len() >= cfg.max_variants || (best.scale_used - 1.0).abs() < 1e-9 {
            break;
        }
        let direction = if best.scale_used > 1.0 { 1.0 } else { -1.0 };
        let outermost = tried
            .iter()
            .map(|o| direction * (o.scale_used - 1.0))
            .fold(0.0f64, f64::max);
        if direction * (best.scale_used - 1.0) < outermost - 1e-9 {
            break;
        }
        let next = best.scale_used + direction * cfg.scale_step;
        if next < cfg.scale_bounds.0 - 1e-9 || next > cfg.scale_bounds.1 + 1e-9 {
            break;
        }
        let before = tried.len();
        run(next, &mut tried)?;
        let improved = tried.len() > before
            && tried.last().map(|o| o.fitness > best.fitness).unwrap_or(false);
        if !improved {
            break;
        }
    }

    if tried.is_empty() {
        return Err(Error::NoMatch);
    }
    let qualifying_best = tried
        .iter()
        .filter(|o| qualifies(o))
        .max_by(|a, b| better(a, b));
    let best = qualifying_best
        .or_else(|| tried.iter().max_by(|a, b| better(a, b)))
        .unwrap()
        .clone();
    Ok(best)
}

/// Maps the variant's probe point through the alignment and snaps it to the
/// nearest target point; the result is bitwise a member of the target.
pub fn transfer_probe_point(
    outcome: &RegistrationOutcome,
    variant: &ScaleVariant,
    target: &PointCloud,
) -> Result<Vector3<f64>> {
    if target.points.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    let mapped = outcome.transform.rotation * variant.probe_point + outcome.transform.translation;
    let tree = NeighborIndex::build(&target.points);
    let (idx, _) = tree.query(&mapped, 1)[0];
    Ok(target.points[idx])
}

/// PCA surface normal over the k nearest neighbors of p_S, oriented toward
/// the viewpoint. Returns (normal, degenerate) where degenerate marks a
/// spectrum whose two smallest eigenvalues are within 1% relative.
pub fn probe_orientation(
    target: &PointCloud,
    p_s: &Vector3<f64>,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<(Vector3<f64>, bool)> {
    if target.points.len() < k {
        return Err(Error::NotEnoughData(format!(
            "{} points, need >= {k}",
            target.points.len()
        )));
    }
    let tree = NeighborIndex::build(&target.points);
    let hits = tree.query(p_s, k);
    let centroid = hits
        .iter()
        .map(|h| target.points[h.0])
        .sum::<Vector3<f64>>()
        / hits.len() as f64;
    let mut cov = Matrix3::zeros();
    for h in &hits {
        let d = target.points[h.0] - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if (viewpoint - p_s).dot(&normal) < 0.0 {
        normal = -normal;
    }
    let degenerate = {
        let l0 = eig.eigenvalues[order[0]];
        let l1 = eig.eigenvalues[order[1]];
        l1 <= 0.0 || (l1 - l0) / l1 < 0.01
    };
    Ok((normal, degenerate))
}

/// Full matching stage: scale loop, probe-point transfer, and orientation.
pub fn match_template(
    template: &TemplateModel,
    target: &PointCloud,
    viewpoint: &Vector3<f64>,
    cfg: &RegistrationConfig,
) -> Result<ProbePose> {
    let outcome = match_with_scale_loop(template, target, viewpoint, cfg)?;
    let variant = scale_template(template, outcome.scale_used)?;
    let position = transfer_probe_point(&outcome, &variant, target)?;
    let (normal, _degenerate) = probe_orientation(target, &position, 30, viewpoint)?;
    Ok(ProbePose {
        position,
        normal,
        approach_direction: -normal,
        outcome,
    })
}
