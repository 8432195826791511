//! Pipeline-wide configuration: one JSON document nesting every stage's
//! tuning. Missing fields take the stage defaults; unknown keys are rejected.

use lidarpose::calibration::SolverConfig;
use lidarpose::preprocess::PreprocessConfig;
use lidarpose::reconstruction::{ReconstructionConfig, DEFAULT_SECTOR};
use lidarpose::registration::RegistrationConfig;
use lidarpose::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; copied into every seeded stage.
    pub seed: u64,
    /// Angular sector kept from each scan, radians.
    pub sector: (f64, f64),
    /// Sweep clearance assumed when rebuilding trajectories from disk, meters.
    pub clearance: f64,
    /// Coverage tolerance for surface evaluation, meters.
    pub eval_tolerance: f64,
    /// Neighborhood size for the probe-orientation normal.
    pub probe_normal_k: usize,
    /// Allowed distance from a template probe point to the template surface, meters.
    pub template_anchor_tolerance: f64,
    pub solver: SolverConfig,
    pub reconstruction: ReconstructionConfig,
    pub preprocess: PreprocessConfig,
    pub registration: RegistrationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            sector: DEFAULT_SECTOR,
            clearance: 0.20,
            eval_tolerance: 8e-3,
            probe_normal_k: 30,
            template_anchor_tolerance: 10e-3,
            solver: SolverConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            preprocess: PreprocessConfig::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self> {
        let mut cfg: PipelineConfig = match path {
            Some(p) => {
                let s = std::fs::read_to_string(p)
                    .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&s)
                    .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.solver.seed = cfg.seed;
        cfg.registration.seed = cfg.seed;
        Ok(cfg)
    }

    /// Canonical serialized form used for provenance hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
