//! Rigid transforms and small rotation utilities shared across the crate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid transform `x ↦ R x + t` with `R ∈ SO(3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        Rigid { rot, trans }
    }

    pub fn from_translation(trans: Vector3<f64>) -> Self {
        Rigid {
            rot: Matrix3::identity(),
            trans,
        }
    }

    /// Rotation by `angle` (radians) about the line through `origin` with
    /// direction `axis`.
    pub fn rotation_about_axis(axis: Vector3<f64>, origin: Vector3<f64>, angle: f64) -> Self {
        let rot = rotation_matrix(axis, angle);
        let trans = origin - rot * origin;
        Rigid { rot, trans }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rot * x + self.trans
    }

    /// Rotates a direction vector (ignores the translation part).
    pub fn apply_dir(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rot * d
    }

    /// The inverse transform `(Rᵀ, −Rᵀ t)`.
    pub fn inverse(&self) -> Rigid {
        let rt = self.rot.transpose();
        Rigid {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    /// Rotation angle in radians, from the trace formula.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rot)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rot.transpose() * self.rot;
        (rtr - Matrix3::identity()).norm() < tol
            && (self.rot.determinant() - 1.0).abs() < tol
            && self.trans.iter().all(|v| v.is_finite())
    }
}

/// Rotation matrix about a (not necessarily unit) axis, Rodrigues form.
pub fn rotation_matrix(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let u = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = skew(&u);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation angle in `[0, π]` from the trace formula, clamped for safety.
pub fn rotation_angle(rot: &Matrix3<f64>) -> f64 {
    (((rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Axis-angle decomposition with angle in `[0, π]`.
///
/// For angles near 0 the axis is arbitrary and `(e_z, 0)` is returned; for
/// angles near π the axis is recovered from the symmetric part.
pub fn axis_angle(rot: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let angle = rotation_angle(rot);
    if angle < 1e-9 {
        return (Vector3::z(), angle);
    }
    if angle < std::f64::consts::PI - 1e-6 {
        let axis = Vector3::new(
            rot[(2, 1)] - rot[(1, 2)],
            rot[(0, 2)] - rot[(2, 0)],
            rot[(1, 0)] - rot[(0, 1)],
        ) / (2.0 * angle.sin());
        (axis.normalize(), angle)
    } else {
        // Near π: R ≈ 2uuᵀ − I, take the dominant column of R + I.
        let m = rot + Matrix3::identity();
        let col = (0..3)
            .max_by(|&a, &b| {
                m.column(a)
                    .norm()
                    .partial_cmp(&m.column(b).norm())
                    .unwrap()
            })
            .unwrap();
        let axis = m.column(col).normalize();
        (axis.into(), angle)
    }
}

/// Geodesic distance between two rotations, in radians.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a * b.transpose()))
}

/// World-to-camera transform for a camera at `eye` looking at `target`,
/// with +x right, +y down, +z forward and world +z as the up hint.
pub fn look_at_world_to_cam(eye: Vector3<f64>, target: Vector3<f64>) -> Rigid {
    let fwd = (target - eye).normalize();
    let up_hint = if fwd.z.abs() > 0.999 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let right = fwd.cross(&up_hint).normalize();
    let down = fwd.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let trans = -(rot * eye);
    Rigid { rot, trans }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rigid(rng: &mut StdRng) -> Rigid {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-6 { Vector3::x() } else { axis };
        let angle = rng.random_range(-3.0..3.0);
        let trans = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Rigid::new(rotation_matrix(axis, angle), trans)
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let m = random_rigid(&mut rng);
            let id = m.compose(&m.inverse());
            assert!((id.rot - Matrix3::identity()).norm() < 1e-12);
            assert!(id.trans.norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_inverse_negates() {
        let m = Rigid::from_translation(Vector3::new(0.1, -0.2, 0.3));
        let inv = m.inverse();
        assert_relative_eq!(inv.trans, -m.trans, epsilon = 1e-15);
        assert_eq!(inv.rot, Matrix3::identity());
    }

    #[test]
    fn axis_angle_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0f64),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if axis.norm() < 1e-3 {
                continue;
            }
            let angle = rng.random_range(0.05..3.1);
            let rot = rotation_matrix(axis, angle);
            let (ax, ang) = axis_angle(&rot);
            assert_relative_eq!(ang, angle, epsilon = 1e-9);
            assert_relative_eq!(ax.dot(&axis.normalize()).abs(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_about_axis_fixes_origin_points() {
        let origin = Vector3::new(1.0, 0.0, 0.0);
        let m = Rigid::rotation_about_axis(Vector3::z(), origin, 0.5 * std::f64::consts::PI);
        let moved = m.apply(&origin);
        assert_relative_eq!(moved, origin, epsilon = 1e-12);
        // A point on the axis but displaced along it is also fixed.
        let p = origin + Vector3::z() * 0.3;
        assert_relative_eq!(m.apply(&p), p, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_angle_same_axis() {
        let a = rotation_matrix(Vector3::z(), 30f64.to_radians());
        let b = rotation_matrix(Vector3::z(), 40f64.to_radians());
        assert_relative_eq!(geodesic_angle(&a, &b).to_degrees(), 10.0, epsilon = 1e-10);
    }
}
