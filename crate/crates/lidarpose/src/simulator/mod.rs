//! Deterministic synthetic data generator standing in for the scanner, robot,
//! and mannequin: parametric phantoms, ray-cast scans with seeded noise, and
//! labeled scene export. The ground-truth oracle for the acceptance tests.

pub mod mesh;
pub mod phantom;
pub mod scenario;
pub mod session;

pub use mesh::{brute_force_cast, RayCaster, RayHit, SemanticLabel, TriangleMesh};
pub use phantom::{generate_phantom, icosphere, Phantom, PhantomKind, PhantomParams};
pub use scenario::{beam_rng, cast_scan, SensorModel};
pub use session::{
    downward_orientation, read_calibration_dataset, read_json, read_sweep_recordings,
    run_calibration_session, run_sweep_session, write_calibration_session, write_json,
    write_sweep_session, CalibrationSession, CalibrationSessionConfig, SessionFile, SimScenario,
    SweepSession, SweepSessionConfig, TransformSpec, TruthFile,
};
