//! Axis-angle (rotation vector) parameterization of SO(3).
//!
//! The solver works on the minimal 3-parameter rotation vector; everything
//! else uses rotation matrices. Conversions use closed-form Rodrigues with
//! series expansions near the identity.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

const SMALL_ANGLE: f64 = 1e-8;

/// Rotation vector omega: axis * angle, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationVector {
    pub omega: Vector3<f64>,
}

impl RotationVector {
    pub fn new(omega: Vector3<f64>) -> Self {
        RotationVector { omega }
    }

    pub fn zero() -> Self {
        RotationVector {
            omega: Vector3::zeros(),
        }
    }

    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }

    /// Rodrigues' formula: exp([omega]_x).
    pub fn exp(&self) -> Matrix3<f64> {
        let theta = self.omega.norm();
        let k = skew(&self.omega);
        if theta < SMALL_ANGLE {
            // 2nd-order series, exact to machine precision at this scale
            Matrix3::identity() + k + 0.5 * k * k
        } else {
            let a = theta.sin() / theta;
            let b = (1.0 - theta.cos()) / (theta * theta);
            Matrix3::identity() + a * k + b * k * k
        }
    }

    /// Matrix logarithm of a rotation matrix, principal branch (|angle| <= pi).
    pub fn log(rot: &Matrix3<f64>) -> Self {
        let trace = rot.trace();
        let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = cos_theta.acos();
        if theta < SMALL_ANGLE {
            // log(R) ~ (R - R^T)/2 for small angles
            let w = Vector3::new(
                rot[(2, 1)] - rot[(1, 2)],
                rot[(0, 2)] - rot[(2, 0)],
                rot[(1, 0)] - rot[(0, 1)],
            );
            return RotationVector::new(0.5 * w);
        }
        if (std::f64::consts::PI - theta).abs() < 1e-6 {
            // Near pi the antisymmetric part vanishes; recover the axis from
            // the symmetric part R + I = 2(I*cos + (1-cos) a a^T) ... axis from
            // the largest diagonal element.
            let m = rot + Matrix3::identity();
            let mut axis = Vector3::zeros();
            let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
            let i = if diag[0] >= diag[1] && diag[0] >= diag[2] {
                0
            } else if diag[1] >= diag[2] {
                1
            } else {
                2
            };
            axis[i] = (diag[i] * 0.5).max(0.0).sqrt();
            let inv = 1.0 / (2.0 * axis[i]);
            for j in 0..3 {
                if j != i {
                    axis[j] = m[(j, i)] * inv;
                }
            }
            axis.normalize_mut();
            // Fix the sign using the antisymmetric part when it is not exactly zero.
            let w = Vector3::new(
                rot[(2, 1)] - rot[(1, 2)],
                rot[(0, 2)] - rot[(2, 0)],
                rot[(1, 0)] - rot[(0, 1)],
            );
            if w.dot(&axis) < 0.0 {
                axis = -axis;
            }
            return RotationVector::new(axis * theta);
        }
        let w = Vector3::new(
            rot[(2, 1)] - rot[(1, 2)],
            rot[(0, 2)] - rot[(2, 0)],
            rot[(1, 0)] - rot[(0, 1)],
        );
        RotationVector::new(w * (theta / (2.0 * theta.sin())))
    }

    /// Right Jacobian of SO(3): d/d(delta) log(exp(omega)^-1 exp(omega + delta)).
    pub fn right_jacobian(&self) -> Matrix3<f64> {
        let theta = self.omega.norm();
        let k = skew(&self.omega);
        if theta < SMALL_ANGLE {
            return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
        }
        let t2 = theta * theta;
        let a = (1.0 - theta.cos()) / t2;
        let b = (theta - theta.sin()) / (t2 * theta);
        Matrix3::identity() - a * k + b * k * k
    }
}

/// Skew-symmetric cross-product matrix [v]_x.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalize();
            let angle = rng.gen::<f64>() * 3.0; // < pi
            let rv = RotationVector::new(axis * angle);
            let back = RotationVector::log(&rv.exp());
            assert_relative_eq!(rv.omega, back.omega, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_is_orthonormal() {
        let rv = RotationVector::new(Vector3::new(0.3, -1.2, 0.7));
        let r = rv.exp();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        assert!(err < 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi() {
        let rv = RotationVector::new(Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-9));
        let back = RotationVector::log(&rv.exp());
        assert_relative_eq!(back.omega.norm(), rv.omega.norm(), epsilon = 1e-6);
    }

    #[test]
    fn right_jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let omega = Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            ) * 2.0;
            let rv = RotationVector::new(omega);
            let jr = rv.right_jacobian();
            let h = 1e-7;
            for col in 0..3 {
                let mut d = Vector3::zeros();
                d[col] = h;
                let rp = RotationVector::new(omega + d).exp();
                let rm = RotationVector::new(omega - d).exp();
                // d(exp)/d(omega_col) approximated on the manifold:
                // log(exp(omega)^T exp(omega+d)) / h ~ Jr * e_col
                let base = rv.exp();
                let dplus = RotationVector::log(&(base.transpose() * rp)).omega;
                let dminus = RotationVector::log(&(base.transpose() * rm)).omega;
                let fd = (dplus - dminus) / (2.0 * h);
                let analytic = jr.column(col).into_owned();
                assert_relative_eq!(fd, analytic, epsilon = 1e-5);
            }
        }
    }
}
