//! Synthetic data sessions: multi-pose calibration captures and two-sweep
//! surface recordings, in memory and in the on-disk dataset formats the
//! calibration and reconstruction stages consume.

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_angle, FrameId, Plane, PolarScan, RigidTransform, RotationVector,
};
use crate::io;
use crate::reconstruction::{SweepRecording, SweepTrajectory, DEFAULT_SECTOR};
use crate::simulator::mesh::{RayCaster, SemanticLabel};
use crate::simulator::phantom::{generate_phantom, Phantom, PhantomKind, PhantomParams};
use crate::simulator::scenario::{cast_scan, SensorModel};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// JSON-friendly SE(3): rotation vector + translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSpec {
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
}

impl TransformSpec {
    pub fn to_transform(&self, from: FrameId, to: FrameId) -> RigidTransform {
        RigidTransform::from_parts(
            &RotationVector::new(Vector3::from(self.rotation_vector)),
            Vector3::from(self.translation),
            from,
            to,
        )
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        TransformSpec {
            rotation_vector: t.rotation_vector().omega.into(),
            translation: t.translation.into(),
        }
    }
}

/// Full synthetic scenario: phantom, sensor, mount, and the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimScenario {
    pub phantom_kind: PhantomKind,
    #[serde(default)]
    pub phantom_params: PhantomParams,
    #[serde(default)]
    pub sensor: SensorModel,
    /// True lidar -> tcp extrinsics.
    pub true_extrinsics: TransformSpec,
    pub seed: u64,
    #[serde(default)]
    pub calibration: CalibrationSessionConfig,
    #[serde(default)]
    pub sweep: SweepSessionConfig,
}

impl SimScenario {
    pub fn extrinsics(&self) -> RigidTransform {
        self.true_extrinsics
            .to_transform(FrameId::lidar(), FrameId::tcp())
    }

    pub fn default_mount(seed: u64, phantom_kind: PhantomKind) -> Self {
        SimScenario {
            phantom_kind,
            phantom_params: PhantomParams::default(),
            sensor: SensorModel::default(),
            true_extrinsics: TransformSpec {
                rotation_vector: [0.05, -0.08, 0.1],
                translation: [0.03, -0.02, 0.05],
            },
            seed,
            calibration: CalibrationSessionConfig::default(),
            sweep: SweepSessionConfig::default(),
        }
    }
}

/// Orientation placing the scan fan in the base x-z plane with the sector
/// midline (theta = 180 deg) pointing straight down.
pub fn downward_orientation() -> Matrix3<f64> {
    Matrix3::from_columns(&[
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSessionConfig {
    pub num_poses: usize,
    pub scans_per_pose: usize,
    /// Board center on the bed plane (z = 0), base frame.
    pub board_center: [f64; 2],
    /// Nominal TCP standoff above the board, meters.
    pub standoff: f64,
    /// Orientation diversity amplitude about two axes, radians.
    pub tilt_amplitude: f64,
    /// Disable orientation diversity (negative control for degeneracy checks).
    pub single_orientation: bool,
    pub sector: (f64, f64),
}

impl Default for CalibrationSessionConfig {
    fn default() -> Self {
        CalibrationSessionConfig {
            num_poses: 20,
            scans_per_pose: 2,
            board_center: [0.55, 0.0],
            standoff: 0.4,
            tilt_amplitude: 30.0f64.to_radians(),
            single_orientation: false,
            sector: DEFAULT_SECTOR,
        }
    }
}

/// In-memory calibration capture plus ground truth.
#[derive(Debug, Clone)]
pub struct CalibrationSession {
    /// (tcp pose in base, scans captured at that pose), pose-major order.
    pub captures: Vec<(RigidTransform, Vec<PolarScan>)>,
    pub truth_extrinsics: RigidTransform,
    pub truth_plane: Plane,
    pub sector: (f64, f64),
}

/// Generate TCP poses for the calibration session: positions on a ring above
/// the board, tilts about both horizontal axes.
fn calibration_poses(cfg: &CalibrationSessionConfig) -> Vec<RigidTransform> {
    let k = cfg.num_poses;
    let r0 = downward_orientation();
    (0..k)
        .map(|i| {
            let phase = std::f64::consts::TAU * i as f64 / k as f64;
            let pos = Vector3::new(
                cfg.board_center[0] + 0.06 * phase.cos(),
                cfg.board_center[1] + 0.10 * phase.sin(),
                cfg.standoff + 0.05 * (2.0 * phase).sin(),
            );
            let rot = if cfg.single_orientation {
                r0
            } else {
                let a = cfg.tilt_amplitude * phase.sin();
                let b = cfg.tilt_amplitude * (2.0 * phase + 0.7).sin();
                // yaw spins the fan about vertical; without it every pose
                // cuts the board along the same base direction
                let c = cfg.tilt_amplitude * (phase + 1.3).cos();
                let rx = RotationVector::new(Vector3::new(a, 0.0, 0.0)).exp();
                let ry = RotationVector::new(Vector3::new(0.0, b, 0.0)).exp();
                let rz = RotationVector::new(Vector3::new(0.0, 0.0, c)).exp();
                rz * rx * ry * r0
            };
            RigidTransform::new(rot, pos, FrameId::tcp(), FrameId::base()).unwrap()
        })
        .collect()
}

pub fn run_calibration_session(scenario: &SimScenario) -> Result<CalibrationSession> {
    let cfg = &scenario.calibration;
    let mut board_params = scenario.phantom_params.clone();
    board_params.center = cfg.board_center;
    let board = generate_phantom(PhantomKind::Plate, &board_params)?;
    let caster = RayCaster::new(&board.mesh);
    let extrinsics = scenario.extrinsics();

    let poses = calibration_poses(cfg);
    let mut captures = Vec::with_capacity(poses.len());
    for (k, tcp_pose) in poses.into_iter().enumerate() {
        let sensor_pose = tcp_pose.compose(&extrinsics)?;
        let scans: Vec<PolarScan> = (0..cfg.scans_per_pose)
            .map(|j| {
                let scan_index = (k * cfg.scans_per_pose + j) as u64;
                let t = k as f64 + j as f64 * scenario.sensor.revolution_period;
                cast_scan(
                    &caster,
                    &scenario.sensor,
                    &sensor_pose,
                    t,
                    scan_index,
                    scenario.seed,
                )
            })
            .collect();
        captures.push((tcp_pose, scans));
    }
    Ok(CalibrationSession {
        captures,
        truth_extrinsics: extrinsics,
        truth_plane: Plane::new(Vector3::new(0.0, 0.0, 1.0), 0.0)?,
        sector: cfg.sector,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSessionConfig {
    /// Sweep extent along the base y axis, meters.
    pub y_range: (f64, f64),
    /// Duration of one sweep, seconds.
    pub duration: f64,
    /// Clearance above the highest phantom point, meters.
    pub clearance: f64,
    /// Roll offsets of the two sweeps about the sweep axis, radians.
    pub roll_offsets: [f64; 2],
    pub sector: (f64, f64),
    /// Spacing of the dense labeled ground-truth sampling, meters.
    pub gt_spacing: f64,
}

impl Default for SweepSessionConfig {
    fn default() -> Self {
        SweepSessionConfig {
            y_range: (-0.32, 0.32),
            duration: 8.0,
            // low enough that the chest fills most of the sector; a high pass
            // lets the bed strip outnumber the chest after clustering
            clearance: 0.20,
            roll_offsets: [(-10.0f64).to_radians(), 10.0f64.to_radians()],
            sector: DEFAULT_SECTOR,
            gt_spacing: 0.004,
        }
    }
}

/// Sweep capture plus the labeled ground-truth sampling of the scene.
#[derive(Debug, Clone)]
pub struct SweepSession {
    pub recordings: Vec<SweepRecording>,
    pub phantom: Phantom,
    /// Dense surface samples: (point, outward normal, label).
    pub gt_samples: Vec<(Vector3<f64>, Vector3<f64>, SemanticLabel)>,
    pub truth_extrinsics: RigidTransform,
}

impl SweepSession {
    /// Chest-labeled ground-truth cloud with normals.
    pub fn gt_chest_cloud(&self) -> Result<crate::geometry::PointCloud> {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for (p, n, label) in &self.gt_samples {
            if *label == SemanticLabel::Chest {
                points.push(*p);
                normals.push(*n);
            }
        }
        crate::geometry::PointCloud::with_normals(points, normals, FrameId::base())
    }

    /// Label of the nearest ground-truth sample; classifies arbitrary points.
    pub fn label_points(&self, points: &[Vector3<f64>]) -> Vec<SemanticLabel> {
        let gt_pts: Vec<Vector3<f64>> = self.gt_samples.iter().map(|s| s.0).collect();
        let index = crate::geometry::NeighborIndex::build(&gt_pts);
        points
            .iter()
            .map(|p| self.gt_samples[index.query(p, 1)[0].0].2)
            .collect()
    }
}

pub fn run_sweep_session(scenario: &SimScenario) -> Result<SweepSession> {
    let cfg = &scenario.sweep;
    let phantom = generate_phantom(scenario.phantom_kind, &scenario.phantom_params)?;
    if !matches!(
        scenario.phantom_kind,
        PhantomKind::Male | PhantomKind::Female | PhantomKind::Plate
    ) {
        return Err(Error::RejectedInput(
            "sweep sessions need a chest or plate phantom".into(),
        ));
    }
    let caster = RayCaster::new(&phantom.mesh);
    let extrinsics = scenario.extrinsics();
    let inv_extr = extrinsics.inverse();

    let (_, hi) = phantom.mesh.bounding_box();
    let apex_z = hi.z;
    let x_center = scenario.phantom_params.center[0];

    let mut recordings = Vec::with_capacity(2);
    let mut scan_counter: u64 = 1000; // distinct from calibration scan keys
    for (sweep_idx, &roll) in cfg.roll_offsets.iter().enumerate() {
        // The sensor (not the TCP) should sit above the chest; offset by the
        // inverse extrinsics so the sensor origin lands on the sweep line.
        let rot = RotationVector::new(Vector3::new(0.0, roll, 0.0)).exp() * downward_orientation();
        let t_start = sweep_idx as f64 * (cfg.duration + 1.0);
        let make_pose = |y: f64| {
            let sensor_origin = Vector3::new(x_center, y, apex_z + cfg.clearance);
            // tcp = sensor_pose ∘ extrinsics^-1
            let sensor_pose =
                RigidTransform::new(rot, sensor_origin, FrameId::lidar(), FrameId::base())
                    .unwrap();
            sensor_pose.compose(&inv_extr).unwrap()
        };
        let trajectory = SweepTrajectory::new(
            vec![
                (t_start, make_pose(cfg.y_range.0)),
                (t_start + cfg.duration, make_pose(cfg.y_range.1)),
            ],
            cfg.clearance,
            cfg.sector,
        )?;

        let num_scans =
            (cfg.duration / scenario.sensor.revolution_period).floor() as usize;
        let mut scans = Vec::with_capacity(num_scans);
        for s in 0..num_scans {
            let t = t_start + s as f64 * scenario.sensor.revolution_period;
            // Pose is sampled exactly as reconstruction will re-interpolate it:
            // per-beam, at the beam timestamp.
            let scan =
                cast_moving_scan(&caster, scenario, &trajectory, t, scan_counter)?;
            scans.push(scan);
            scan_counter += 1;
        }
        recordings.push(SweepRecording::new(trajectory, scans)?);
    }

    let gt_samples = phantom.mesh.sample_surface(cfg.gt_spacing);
    Ok(SweepSession {
        recordings,
        phantom,
        gt_samples,
        truth_extrinsics: extrinsics,
    })
}

/// Cast one revolution while the robot moves: each beam uses the sensor pose
/// interpolated at that beam's timestamp.
fn cast_moving_scan(
    caster: &RayCaster,
    scenario: &SimScenario,
    trajectory: &SweepTrajectory,
    t: f64,
    scan_index: u64,
) -> Result<PolarScan> {
    use crate::reconstruction::interpolate_pose;
    let sensor = &scenario.sensor;
    let extrinsics = scenario.extrinsics();
    let n = sensor.beams_per_revolution();
    let (t0, t1) = trajectory.time_span();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let theta = normalize_angle(i as f64 * sensor.angular_step);
        let ts = (t + theta / std::f64::consts::TAU * sensor.revolution_period).clamp(t0, t1);
        let tcp_pose = interpolate_pose(trajectory, ts)?;
        let sensor_pose = tcp_pose.compose(&extrinsics)?;
        // reuse the single-beam logic from cast_scan by casting a 1-beam scan
        let single = SensorModel {
            angular_step: std::f64::consts::TAU, // one beam
            ..sensor.clone()
        };
        let mut beam_scan = cast_scan_at_angle(caster, &single, &sensor_pose, ts, scan_index, scenario.seed, theta, i as u64);
        samples.append(&mut beam_scan);
    }
    Ok(PolarScan {
        samples,
        scan_timestamp: t,
    })
}

/// One beam at a fixed angle; shares the (seed, scan, beam) stream keying.
fn cast_scan_at_angle(
    caster: &RayCaster,
    sensor: &SensorModel,
    sensor_pose: &RigidTransform,
    ts: f64,
    scan_index: u64,
    seed: u64,
    theta: f64,
    beam_index: u64,
) -> Vec<crate::geometry::PolarSample> {
    use crate::geometry::PolarSample;
    use crate::simulator::scenario::beam_rng;
    use rand::Rng;
    let origin = sensor_pose.translation;
    let dir_l = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let dir_b = sensor_pose.transform_direction(&dir_l);
    let mut rng = beam_rng(seed, scan_index, beam_index);
    let dropout =
        sensor.dropout_probability > 0.0 && rng.gen::<f64>() < sensor.dropout_probability;
    let noise = if sensor.range_noise_sigma > 0.0 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * sensor.range_noise_sigma
    } else {
        0.0
    };
    let sample = match caster.cast(&origin, &dir_b, sensor.max_range) {
        Some(hit) if !dropout => PolarSample::new((hit.distance + noise).max(0.0), theta, ts),
        _ => PolarSample::invalid(theta, ts),
    };
    vec![sample]
}

// ---------------------------------------------------------------------------
// On-disk dataset formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionFile {
    pub sector_lo: f64,
    pub sector_hi: f64,
    pub scans_per_pose: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub extrinsics: TransformSpec,
    pub plane_normal: Option<[f64; 3]>,
    pub plane_offset: Option<f64>,
    pub pmi: Option<[f64; 3]>,
    pub marker_apex: Option<[f64; 3]>,
    pub marker_center: Option<[f64; 3]>,
}

/// Writes poses.csv, per-pose scan CSVs, session.json, and truth.json.
pub fn write_calibration_session(session: &CalibrationSession, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let poses: Vec<(f64, RigidTransform)> = session
        .captures
        .iter()
        .enumerate()
        .map(|(k, (pose, _))| (k as f64, pose.clone()))
        .collect();
    io::write_pose_log(&dir.join("poses.csv"), &poses)?;
    for (k, (_, scans)) in session.captures.iter().enumerate() {
        io::write_scan_log(&dir.join(format!("scans_pose_{k:02}.csv")), scans)?;
    }
    let session_file = SessionFile {
        sector_lo: session.sector.0,
        sector_hi: session.sector.1,
        scans_per_pose: session.captures.first().map_or(0, |(_, s)| s.len()),
    };
    write_json(&dir.join("session.json"), &session_file)?;
    let truth = TruthFile {
        extrinsics: TransformSpec::from_transform(&session.truth_extrinsics),
        plane_normal: Some(session.truth_plane.normal.into()),
        plane_offset: Some(session.truth_plane.offset),
        pmi: None,
        marker_apex: None,
        marker_center: None,
    };
    write_json(&dir.join("truth.json"), &truth)
}

/// Reads the dataset produced by `write_calibration_session`.
pub fn read_calibration_dataset(
    dir: &Path,
) -> Result<(Vec<(RigidTransform, Vec<PolarScan>)>, SessionFile)> {
    let poses = io::read_pose_log(&dir.join("poses.csv"), FrameId::tcp(), FrameId::base())?;
    let session: SessionFile = read_json(&dir.join("session.json"))?;
    let mut captures = Vec::with_capacity(poses.len());
    for (k, (_, pose)) in poses.into_iter().enumerate() {
        let scans = io::read_scan_log(&dir.join(format!("scans_pose_{k:02}.csv")))?;
        captures.push((pose, scans));
    }
    Ok((captures, session))
}

/// Writes sweep_<i>/trajectory.csv + scans.csv, the labeled ground-truth
/// sampling, the chest-only GT cloud, and truth.json.
pub fn write_sweep_session(session: &SweepSession, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, rec) in session.recordings.iter().enumerate() {
        let sweep_dir = dir.join(format!("sweep_{i}"));
        std::fs::create_dir_all(&sweep_dir)?;
        io::write_pose_log(&sweep_dir.join("trajectory.csv"), &rec.trajectory.waypoints)?;
        io::write_scan_log(&sweep_dir.join("scans.csv"), &rec.scans)?;
    }
    // labeled samples
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("gt_labeled.csv"))?);
    writeln!(f, "x,y,z,nx,ny,nz,label")?;
    for (p, n, label) in &session.gt_samples {
        writeln!(
            f,
            "{:?},{:?},{:?},{:?},{:?},{:?},{}",
            p.x,
            p.y,
            p.z,
            n.x,
            n.y,
            n.z,
            label.name()
        )?;
    }
    drop(f);
    io::write_ply(&dir.join("gt_chest.ply"), &session.gt_chest_cloud()?)?;
    let truth = TruthFile {
        extrinsics: TransformSpec::from_transform(&session.truth_extrinsics),
        plane_normal: None,
        plane_offset: None,
        pmi: session.phantom.pmi.map(Into::into),
        marker_apex: session.phantom.marker_apex.map(Into::into),
        marker_center: session.phantom.marker_center.map(Into::into),
    };
    write_json(&dir.join("truth.json"), &truth)
}

/// Reads the sweeps written by `write_sweep_session` back into recordings.
pub fn read_sweep_recordings(dir: &Path, sector: (f64, f64), clearance: f64) -> Result<Vec<SweepRecording>> {
    let mut recordings = Vec::new();
    let mut i = 0;
    loop {
        let sweep_dir = dir.join(format!("sweep_{i}"));
        if !sweep_dir.exists() {
            break;
        }
        let waypoints =
            io::read_pose_log(&sweep_dir.join("trajectory.csv"), FrameId::tcp(), FrameId::base())?;
        let scans = io::read_scan_log(&sweep_dir.join("scans.csv"))?;
        let trajectory = SweepTrajectory::new(waypoints, clearance, sector)?;
        recordings.push(SweepRecording::new(trajectory, scans)?);
        i += 1;
    }
    if recordings.is_empty() {
        return Err(Error::NotEnoughData(format!(
            "no sweep_<i> directories under {}",
            dir.display()
        )));
    }
    Ok(recordings)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
