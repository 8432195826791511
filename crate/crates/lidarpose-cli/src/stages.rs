//! Thin command wrappers around the library stages. Each command reads its
//! inputs, runs one stage, writes the stage output plus a provenance
//! manifest, and leaves everything else to the library.

use crate::config::PipelineConfig;
use crate::manifest::{build_manifest, write_manifest};
use lidarpose::calibration::{
    extract_pose_inliers, solve_extrinsics, write_calibration_report, write_residuals_csv,
    CalibrationReport, PoseScanSet,
};
use lidarpose::geometry::{FrameId, NeighborIndex, RigidTransform, RotationVector};
use lidarpose::io::{read_ply, write_ply};
use lidarpose::metrics::{project_marker, surface_error, tangential_error};
use lidarpose::preprocess::{
    density_cluster, estimate_normals, poisson_reconstruct_and_trim, radius_outlier_removal,
    statistical_outlier_removal, voxel_downsample,
};
use lidarpose::reconstruction::accumulate_sweeps;
use lidarpose::registration::{match_template, ProbePose, SexVariant, TemplateModel};
use lidarpose::simulator::{
    generate_phantom, read_calibration_dataset, read_json, read_sweep_recordings,
    run_calibration_session, run_sweep_session, write_calibration_session, write_json,
    write_sweep_session, PhantomKind, PhantomParams, SimScenario, TruthFile,
};
use lidarpose::{Error, PointCloud, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct ViewpointFile {
    /// Mean sensor origin during the sweeps, base frame.
    pub viewpoint: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbePoseRecord {
    pub position_m: [f64; 3],
    pub normal: [f64; 3],
    pub approach_direction: [f64; 3],
    pub fitness: f64,
    pub inlier_rmse_m: f64,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbePoseRecord {
    pub fn from_pose(pose: &ProbePose) -> Self {
        ProbePoseRecord {
            position_m: pose.position.into(),
            normal: pose.normal.into(),
            approach_direction: pose.approach_direction.into(),
            fitness: pose.outcome.fitness,
            inlier_rmse_m: pose.outcome.inlier_rmse,
            scale: pose.outcome.scale_used,
            iterations: pose.outcome.iterations_used,
            converged: pose.outcome.converged,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub e_rmse_mm: f64,
    pub e_95_mm: f64,
    /// Fraction of cloud points within the tolerance of the reference.
    pub coverage: f64,
    pub tolerance_mm: f64,
    /// Probe-to-projected-marker distance; needs --probe and a truth file
    /// carrying a marker or PMI position.
    pub tangential_error_mm: Option<f64>,
}

pub fn cmd_simulate(scenario_path: &Path, out: &Path, cfg: &PipelineConfig, seed_override: Option<u64>) -> Result<()> {
    let mut scenario: SimScenario = read_json(scenario_path)?;
    if let Some(seed) = seed_override {
        scenario.seed = seed;
    }
    std::fs::create_dir_all(out)?;
    let calibration = run_calibration_session(&scenario)?;
    write_calibration_session(&calibration, &out.join("calibration"))?;
    let sweeps = run_sweep_session(&scenario)?;
    write_sweep_session(&sweeps, &out.join("sweeps"))?;
    let manifest = build_manifest(
        "simulate",
        scenario.seed,
        &cfg.canonical_json(),
        &[scenario_path],
    )?;
    write_manifest(out, &manifest)
}

pub fn cmd_calibrate(dataset: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let (captures, session) = read_calibration_dataset(dataset)?;
    let sets: Vec<PoseScanSet> = captures
        .into_iter()
        .enumerate()
        .map(|(i, (tcp_pose, scans))| PoseScanSet {
            pose_index: i,
            tcp_pose,
            scans,
        })
        .collect();
    let sector = (session.sector_lo, session.sector_hi);
    let inliers = extract_pose_inliers(&sets, sector, &cfg.solver)?;
    let result = solve_extrinsics(&inliers, None, &cfg.solver)?;
    let report = CalibrationReport::from_result(&result);
    write_calibration_report(out, &report)?;
    write_residuals_csv(&sibling(out, "residuals.csv"), &result.residuals_by_pose)?;
    let manifest = build_manifest("calibrate", cfg.seed, &cfg.canonical_json(), &[dataset])?;
    write_manifest(out, &manifest)
}

pub fn cmd_reconstruct(
    dataset: &Path,
    calibration: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<()> {
    let report = lidarpose::calibration::read_calibration_report(calibration)?;
    let extrinsics = RigidTransform::from_parts(
        &RotationVector::new(Vector3::from(report.extrinsics.rotation_vector)),
        Vector3::from(report.extrinsics.translation_m),
        FrameId::lidar(),
        FrameId::tcp(),
    );
    let recordings = read_sweep_recordings(dataset, cfg.sector, cfg.clearance)?;
    let cloud = accumulate_sweeps(&recordings, &extrinsics, &cfg.reconstruction)?;
    write_ply(out, &cloud)?;

    // Mean sensor origin over the sweep waypoints; downstream normal
    // orientation points toward it.
    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for rec in &recordings {
        for (_, pose) in &rec.trajectory.waypoints {
            sum += pose.compose(&extrinsics)?.translation;
            count += 1;
        }
    }
    let viewpoint = sum / count as f64;
    write_json(
        &sibling(out, "viewpoint.json"),
        &ViewpointFile {
            viewpoint: viewpoint.into(),
        },
    )?;
    let manifest = build_manifest(
        "reconstruct",
        cfg.seed,
        &cfg.canonical_json(),
        &[dataset, calibration],
    )?;
    write_manifest(out, &manifest)
}

/// Runs the preprocessing chain stepwise so --debug-dir can capture every
/// intermediate cloud.
pub fn run_preprocess(
    raw: &PointCloud,
    cfg: &PipelineConfig,
    viewpoint: &Vector3<f64>,
    debug_dir: Option<&Path>,
) -> Result<PointCloud> {
    let p = &cfg.preprocess;
    let dump = |name: &str, cloud: &PointCloud| -> Result<()> {
        if let Some(dir) = debug_dir {
            std::fs::create_dir_all(dir)?;
            write_ply(&dir.join(name), cloud)?;
        }
        Ok(())
    };
    let down = voxel_downsample(raw, p.voxel_size)?;
    dump("1_downsampled.ply", &down)?;
    let sor = statistical_outlier_removal(&down, p.sor_k, p.sor_std_ratio)?;
    dump("2_statistical.ply", &sor)?;
    let ror = radius_outlier_removal(&sor, p.ror_radius, p.ror_min_neighbors)?;
    dump("3_radius.ply", &ror)?;
    let clusters = density_cluster(&ror, p.cluster_eps, p.cluster_min_points)?;
    let body = clusters
        .into_iter()
        .next()
        .ok_or(Error::EmptyReconstruction)?;
    dump("4_cluster.ply", &body)?;
    let with_normals = estimate_normals(&body, p.normal_k, viewpoint)?;
    let surface = poisson_reconstruct_and_trim(&with_normals, p)?;
    let out = estimate_normals(&surface, p.normal_k, viewpoint)?;
    dump("5_surface.ply", &out)?;
    Ok(out)
}

pub fn cmd_preprocess(
    input: &Path,
    out: &Path,
    viewpoint_flag: Option<&str>,
    cfg: &PipelineConfig,
    debug_dir: Option<&Path>,
) -> Result<()> {
    let raw = read_ply(input, FrameId::base())?;
    let viewpoint = resolve_viewpoint(viewpoint_flag, input, &raw)?;
    let cleaned = run_preprocess(&raw, cfg, &viewpoint, debug_dir)?;
    write_ply(out, &cleaned)?;
    // carried forward so the matching stage orients the probe the same way
    write_json(
        &sibling(out, "viewpoint.json"),
        &ViewpointFile {
            viewpoint: viewpoint.into(),
        },
    )?;
    let manifest = build_manifest("preprocess", cfg.seed, &cfg.canonical_json(), &[input])?;
    write_manifest(out, &manifest)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemplateMeta {
    pub probe_point: [f64; 3],
    pub sex_variant: SexVariant,
    pub name: String,
}

pub fn load_template(dir: &Path, cfg: &PipelineConfig) -> Result<TemplateModel> {
    let cloud = read_ply(&dir.join("template.ply"), FrameId::template())?;
    let meta: TemplateMeta = read_json(&dir.join("template.json"))?;
    TemplateModel::new(
        cloud,
        Vector3::from(meta.probe_point),
        meta.sex_variant,
        meta.name,
        cfg.template_anchor_tolerance,
    )
}

/// Canonical chest template generated from the matching phantom variant:
/// surface sampling, voxel downsampling, normals, probe point anchored to
/// the nearest sampled point of the analytic ideal-probe location.
pub fn builtin_template(variant: SexVariant, cfg: &PipelineConfig) -> Result<TemplateModel> {
    let mut params = PhantomParams::default();
    params.with_scene = false;
    params.grid_cells = 48;
    let kind = match variant {
        SexVariant::Male => PhantomKind::Male,
        SexVariant::Female => PhantomKind::Female,
    };
    let phantom = generate_phantom(kind, &params)?;
    let spacing = 4e-3;
    // chest front only: steep flanks and the lowest rim are never
    // reconstructed by a top-down sweep and would cap the reachable fitness,
    // while the end slopes above the rim anchor the match along the body axis
    let z_min = 0.3 * params.torso_half_axes[2];
    let points: Vec<Vector3<f64>> = phantom
        .mesh
        .sample_surface(spacing)
        .into_iter()
        .filter(|(p, n, _)| n.z > 0.5 && p.z > z_min)
        .map(|(p, _, _)| p)
        .collect();
    let raw = PointCloud::new(points, FrameId::template())?;
    let down = voxel_downsample(&raw, spacing)?;
    let viewpoint = down.centroid() + Vector3::new(0.0, 0.0, 1.0);
    let cloud = estimate_normals(&down, 12, &viewpoint)?;
    let pmi = phantom.pmi.ok_or(Error::EmptyReconstruction)?;
    let tree = NeighborIndex::build(&cloud.points);
    let anchor = cloud.points[tree.query(&pmi, 1)[0].0];
    let name = match variant {
        SexVariant::Male => "builtin_male",
        SexVariant::Female => "builtin_female",
    };
    TemplateModel::new(
        cloud,
        anchor,
        variant,
        name.into(),
        cfg.template_anchor_tolerance,
    )
}

pub struct MatchArgs<'a> {
    pub input: &'a Path,
    pub template_dir: Option<&'a Path>,
    pub builtin: Option<SexVariant>,
    pub viewpoint_flag: Option<&'a str>,
    pub out: &'a Path,
}

pub fn cmd_match(args: &MatchArgs, cfg: &PipelineConfig, debug_dir: Option<&Path>) -> Result<()> {
    let target = read_ply(args.input, FrameId::base())?;
    let template = match (args.template_dir, args.builtin.clone()) {
        (Some(dir), _) => load_template(dir, cfg)?,
        (None, Some(variant)) => builtin_template(variant, cfg)?,
        (None, None) => {
            return Err(Error::RejectedInput(
                "need --template-dir or --template male|female".into(),
            ))
        }
    };
    let viewpoint = resolve_viewpoint(args.viewpoint_flag, args.input, &target)?;
    let pose = match_template(&template, &target, &viewpoint, &cfg.registration)?;
    if let Some(dir) = debug_dir {
        std::fs::create_dir_all(dir)?;
        // scaling is about the template centroid, matching scale_template
        let c = template.cloud.centroid();
        let aligned: Vec<Vector3<f64>> = template
            .cloud
            .points
            .iter()
            .map(|p| {
                let scaled = c + (p - c) * pose.outcome.scale_used;
                pose.outcome.transform.rotation * scaled + pose.outcome.transform.translation
            })
            .collect();
        write_ply(
            &dir.join("aligned_template.ply"),
            &PointCloud::new(aligned, FrameId::base())?,
        )?;
    }
    write_json(args.out, &ProbePoseRecord::from_pose(&pose))?;
    let mut inputs: Vec<&Path> = vec![args.input];
    if let Some(dir) = args.template_dir {
        inputs.push(dir);
    }
    let manifest = build_manifest("match", cfg.seed, &cfg.canonical_json(), &inputs)?;
    write_manifest(args.out, &manifest)
}

pub struct EvalArgs<'a> {
    pub cloud: &'a Path,
    pub reference: &'a Path,
    pub probe: Option<&'a Path>,
    pub truth: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn cmd_eval(args: &EvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let cloud = read_ply(args.cloud, FrameId::base())?;
    let reference = read_ply(args.reference, FrameId::base())?;
    let report = surface_error(&cloud, &reference, cfg.eval_tolerance)?;
    let mut record = EvalRecord {
        e_rmse_mm: report.e_rmse * 1e3,
        e_95_mm: report.e_95 * 1e3,
        coverage: report.coverage,
        tolerance_mm: report.tolerance * 1e3,
        tangential_error_mm: None,
    };
    if let (Some(probe_path), Some(truth_path)) = (args.probe, args.truth) {
        let probe: ProbePoseRecord = read_json(probe_path)?;
        let truth: TruthFile = read_json(truth_path)?;
        let marker = truth.marker_apex.or(truth.pmi);
        if let Some(marker) = marker {
            let p_s = Vector3::from(probe.position_m);
            let n_s = Vector3::from(probe.normal).normalize();
            let p_par = project_marker(&Vector3::from(marker), &p_s, &n_s)?;
            record.tangential_error_mm = Some(tangential_error(&p_par, &p_s) * 1e3);
        }
    }
    write_json(args.out, &record)?;
    let mut inputs: Vec<&Path> = vec![args.cloud, args.reference];
    inputs.extend(args.probe);
    inputs.extend(args.truth);
    let manifest = build_manifest("eval", cfg.seed, &cfg.canonical_json(), &inputs)?;
    write_manifest(args.out, &manifest)
}

/// Viewpoint priority: explicit `x,y,z` flag, then a `<input>.viewpoint.json`
/// sidecar, then half a meter above the cloud centroid.
pub fn resolve_viewpoint(
    flag: Option<&str>,
    input: &Path,
    cloud: &PointCloud,
) -> Result<Vector3<f64>> {
    if let Some(s) = flag {
        let parts: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::RejectedInput(format!("bad --viewpoint {s:?}: {e}")))?;
        if parts.len() != 3 {
            return Err(Error::RejectedInput(format!(
                "--viewpoint needs 3 components, got {}",
                parts.len()
            )));
        }
        return Ok(Vector3::new(parts[0], parts[1], parts[2]));
    }
    let sidecar = sibling(input, "viewpoint.json");
    if sidecar.exists() {
        let vf: ViewpointFile = read_json(&sidecar)?;
        return Ok(Vector3::from(vf.viewpoint));
    }
    Ok(cloud.centroid() + Vector3::new(0.0, 0.0, 0.5))
}

/// `dir/name.ext` -> `dir/name.suffix`.
pub fn sibling(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}
