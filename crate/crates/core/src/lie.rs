//! SO(3)/SE(3) manifold operations.
//!
//! Tangent vectors are ordered rotation first: `[ω; v]`. Poses are perturbed on
//! the right, `T ⊕ δ = T · exp(δ)`, and every Jacobian in this crate follows that
//! convention.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle `sin θ / θ`-style terms switch to their Taylor expansions.
const EXP_SMALL_ANGLE: f64 = 1e-8;
/// The SE(3) Jacobian coefficients lose precision much earlier than the
/// Rodrigues terms, so they switch to series at a larger angle.
const JAC_SMALL_ANGLE: f64 = 1e-2;
/// Rotations closer than this to π are rejected by [`log_so3`].
pub const NEAR_PI_MARGIN: f64 = 1e-6;

/// 3×3 rotation matrix. Serialized as three rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Matrix3<f64>);

impl From<[[f64; 3]; 3]> for Rotation {
    fn from(rows: [[f64; 3]; 3]) -> Self {
        Self(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        std::array::from_fn(|i| std::array::from_fn(|j| r.0[(i, j)]))
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix that the caller guarantees to be orthonormal.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an almost-orthonormal matrix back onto SO(3) (Gram–Schmidt on the columns).
    pub fn from_matrix_orthonormalized(m: Matrix3<f64>) -> Self {
        let x = m.column(0).normalize();
        let y = m.column(1) - x * x.dot(&m.column(1));
        let y = y.normalize();
        let z = x.cross(&y);
        Self(Matrix3::from_columns(&[x, y, z]))
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Result<Vector3<f64>> {
        log_so3(self)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let w = vee(&(self.0 - self.0.transpose())) * 0.5;
        let c = 0.5 * (self.0.trace() - 1.0);
        w.norm().atan2(c)
    }

    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    pub fn renormalized(&self) -> Self {
        Self::from_matrix_orthonormalized(self.0)
    }
}

/// Rigid transform `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.translation + self.rotation.rotate(&other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -rt.rotate(&self.translation),
        }
    }

    /// `self⁻¹ · other` without forming the inverse explicitly.
    pub fn between(&self, other: &Pose) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt.compose(&other.rotation),
            translation: rt.rotate(&(other.translation - self.translation)),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Right retraction `self · exp(δ)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let p = self.compose(&exp_se3(&Twist::from_vector(delta), 1.0));
        Pose {
            rotation: p.rotation.renormalized(),
            translation: p.translation,
        }
    }

    /// Right-invariant local coordinates: `log(self⁻¹ · other)`.
    pub fn local(&self, other: &Pose) -> Result<Vector6<f64>> {
        Ok(log_se3(&self.between(other))?.to_vector())
    }

    /// Matrix of `Ad_T` acting on `[ω; v]`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        adjoint(self)
    }
}

/// Element of se(3): angular (rad/s) and translational (m/s) parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self { angular, translational }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            angular: v.fixed_rows::<3>(0).into_owned(),
            translational: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.translational);
        v
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.angular * s, self.translational * s)
    }
}

/// `v^` such that `skew(v) · w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for an antisymmetric matrix.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn exp_so3(phi: &Vector3<f64>) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < EXP_SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Principal-branch logarithm. Fails within [`NEAR_PI_MARGIN`] of π.
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let w = vee(&(m - m.transpose())) * 0.5;
    let s = w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(Error::NearPiRotation { angle: theta });
    }
    let scale = if theta < EXP_SMALL_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / s
    };
    Ok(w * scale)
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn left_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < EXP_SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn left_jacobian_so3_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let c = if theta < JAC_SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn right_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_so3(&-phi)
}

pub fn right_jacobian_so3_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_so3_inv(&-phi)
}

/// `exp(ξ·dt)` on SE(3).
pub fn exp_se3(xi: &Twist, dt: f64) -> Pose {
    debug_assert!(dt >= 0.0, "exp_se3 expects a non-negative time step");
    let w = xi.angular * dt;
    let v = xi.translational * dt;
    Pose {
        rotation: exp_so3(&w),
        translation: left_jacobian_so3(&w) * v,
    }
}

pub fn log_se3(t: &Pose) -> Result<Twist> {
    let w = log_so3(&t.rotation)?;
    let v = left_jacobian_so3_inv(&w) * t.translation;
    Ok(Twist::new(w, v))
}

pub fn adjoint(t: &Pose) -> Matrix6<f64> {
    let r = t.rotation.matrix();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&t.translation) * r));
    ad
}

/// Coupling block of the SE(3) left Jacobian for `ξ = [φ; ρ]`.
fn se3_q(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let p = skew(phi);
    let r = skew(rho);
    let (c1, c2, c3) = if theta < JAC_SMALL_ANGLE {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta2 * theta;
        (
            (theta - s) / t3,
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * t3),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

pub fn left_jacobian_se3(xi: &Vector6<f64>) -> Matrix6<f64> {
    let phi = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    let j = left_jacobian_so3(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&phi, &rho));
    out
}

pub fn left_jacobian_se3_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let phi = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    let ji = left_jacobian_so3_inv(&phi);
    let q = se3_q(&phi, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ji * q * ji));
    out
}

/// `exp(ξ + δ) ≈ exp(ξ) · exp(J_r(ξ) δ)`.
pub fn right_jacobian_se3(xi: &Vector6<f64>) -> Matrix6<f64> {
    left_jacobian_se3(&-xi)
}

pub fn right_jacobian_se3_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    left_jacobian_se3_inv(&-xi)
}
