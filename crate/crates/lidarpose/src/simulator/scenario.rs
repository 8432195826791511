//! Sensor model and deterministic scan casting.
//!
//! Every stochastic draw is keyed by (seed, scan index, beam index) through a
//! counter-based stream, so scans can be generated in parallel and are
//! bit-reproducible regardless of generation order.

use crate::geometry::{PolarSample, PolarScan, RigidTransform};
use crate::simulator::mesh::RayCaster;
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorModel {
    /// Beam angular step, radians. Default 0.72 degrees.
    pub angular_step: f64,
    /// Additive Gaussian range noise sigma, meters.
    pub range_noise_sigma: f64,
    /// Per-beam dropout probability.
    pub dropout_probability: f64,
    /// One scanner revolution, seconds.
    pub revolution_period: f64,
    /// Beams with no hit within this range are invalid, meters.
    pub max_range: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            angular_step: 0.72f64.to_radians(),
            range_noise_sigma: 0.0,
            dropout_probability: 0.0,
            revolution_period: 0.1,
            max_range: 4.0,
        }
    }
}

impl SensorModel {
    pub fn beams_per_revolution(&self) -> usize {
        (TAU / self.angular_step).floor() as usize
    }
}

/// splitmix64-style mixing of (seed, a, b) into one RNG stream key.
fn mix_key(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent RNG stream for one (scan, beam) pair.
pub fn beam_rng(seed: u64, scan_index: u64, beam_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(seed, scan_index, beam_index))
}

/// Standard normal draw via Box-Muller; two uniforms from the stream.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Casts one full revolution from the sensor pose (lidar -> base).
///
/// Beam i fires along (cos(i*step), sin(i*step), 0) in the sensor frame.
/// Sample timestamps spread linearly across the revolution from `t`.
pub fn cast_scan(
    caster: &RayCaster,
    sensor: &SensorModel,
    sensor_pose: &RigidTransform,
    t: f64,
    scan_index: u64,
    seed: u64,
) -> PolarScan {
    let n = sensor.beams_per_revolution();
    let origin = sensor_pose.translation;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let theta = i as f64 * sensor.angular_step;
        let ts = t + theta / TAU * sensor.revolution_period;
        let dir_l = Vector3::new(theta.cos(), theta.sin(), 0.0);
        let dir_b = sensor_pose.transform_direction(&dir_l);
        let mut rng = beam_rng(seed, scan_index, i as u64);
        let dropout = sensor.dropout_probability > 0.0
            && rng.gen::<f64>() < sensor.dropout_probability;
        let noise = if sensor.range_noise_sigma > 0.0 {
            standard_normal(&mut rng) * sensor.range_noise_sigma
        } else {
            // keep the stream aligned whether or not noise is enabled
            0.0
        };
        let sample = match caster.cast(&origin, &dir_b, sensor.max_range) {
            Some(hit) if !dropout => {
                let r = (hit.distance + noise).max(0.0);
                PolarSample::new(r, theta, ts)
            }
            _ => PolarSample::invalid(theta, ts),
        };
        samples.push(sample);
    }
    PolarScan {
        samples,
        scan_timestamp: t,
    }
}
