//! Quadruped leg kinematics and kinematic (contact-based) leg odometry.
//!
//! Each leg has three joints: hip roll about the body x axis, hip pitch and
//! knee pitch about the rotated y axis. With all joints at zero the thigh and
//! calf hang straight down; positive pitch swings the foot forward.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEG_COUNT: usize = 4;
pub const JOINTS_PER_LEG: usize = 3;
pub const JOINT_COUNT: usize = LEG_COUNT * JOINTS_PER_LEG;
/// Leg names in storage order.
pub const LEG_NAMES: [&str; LEG_COUNT] = ["LF", "LH", "RH", "RF"];

pub type Vector12 = SVector<f64, JOINT_COUNT>;

/// Kinematic parameters of a four-legged robot, legs ordered LF, LH, RH, RF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegModel {
    /// Hip-roll joint positions in the body frame (m).
    pub hip_offsets: [[f64; 3]; LEG_COUNT],
    /// Lateral offset from the roll axis to the thigh plane (m).
    pub l_hip: f64,
    pub l_thigh: f64,
    pub l_calf: f64,
    /// `[min, max]` for hip roll, hip pitch and knee (rad).
    pub joint_limits: [[f64; 2]; JOINTS_PER_LEG],
}

impl Default for LegModel {
    fn default() -> Self {
        Self::go2()
    }
}

impl LegModel {
    /// Link geometry resembling a Unitree Go2.
    pub fn go2() -> Self {
        let (hx, hy) = (0.1934, 0.0465);
        Self {
            hip_offsets: [[hx, hy, 0.0], [-hx, hy, 0.0], [-hx, -hy, 0.0], [hx, -hy, 0.0]],
            l_hip: 0.0955,
            l_thigh: 0.213,
            l_calf: 0.213,
            joint_limits: [[-1.0, 1.0], [-2.0, 2.0], [0.0, 2.8]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_hip > 0.0 && self.l_thigh > 0.0 && self.l_calf > 0.0) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::Config("joint limits must satisfy min < max".into()));
        }
        Ok(())
    }

    pub fn hip(&self, leg: usize) -> Vector3<f64> {
        Vector3::from(self.hip_offsets[leg])
    }

    /// +1 for left legs, −1 for right legs.
    pub fn side(&self, leg: usize) -> f64 {
        if leg < 2 {
            1.0
        } else {
            -1.0
        }
    }

    fn check(&self, leg: usize, angles: &Vector3<f64>) -> Result<()> {
        if leg >= LEG_COUNT {
            return Err(Error::InvalidLeg(leg));
        }
        for (joint, &[min, max]) in self.joint_limits.iter().enumerate() {
            let value = angles[joint];
            if !(min..=max).contains(&value) {
                return Err(Error::JointLimit { leg, joint, value, min, max });
            }
        }
        Ok(())
    }
}

/// Velocities, angles and torques of all twelve joints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub angles: Vector12,
    pub velocities: Vector12,
    pub torques: Vector12,
}

impl JointState {
    pub fn leg_angles(&self, leg: usize) -> Vector3<f64> {
        self.angles.fixed_rows::<3>(leg * 3).into_owned()
    }

    pub fn leg_velocities(&self, leg: usize) -> Vector3<f64> {
        self.velocities.fixed_rows::<3>(leg * 3).into_owned()
    }
}

/// Foot contact states, legs ordered LF, LH, RH, RF.
pub type ContactFlags = [bool; LEG_COUNT];

fn roll_matrix(q1: f64) -> Matrix3<f64> {
    let (s, c) = q1.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Foot position in the body frame.
pub fn forward_kinematics(model: &LegModel, leg: usize, angles: &Vector3<f64>) -> Result<Vector3<f64>> {
    model.check(leg, angles)?;
    Ok(fk_unchecked(model, leg, angles))
}

pub(crate) fn fk_unchecked(model: &LegModel, leg: usize, q: &Vector3<f64>) -> Vector3<f64> {
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let planar = Vector3::new(
        model.l_thigh * s2 + model.l_calf * s23,
        model.side(leg) * model.l_hip,
        -(model.l_thigh * c2 + model.l_calf * c23),
    );
    model.hip(leg) + roll_matrix(q[0]) * planar
}

/// Analytic `∂fk/∂θ` for one leg.
pub fn leg_jacobian(model: &LegModel, leg: usize, angles: &Vector3<f64>) -> Result<Matrix3<f64>> {
    model.check(leg, angles)?;
    Ok(jacobian_unchecked(model, leg, angles))
}

pub(crate) fn jacobian_unchecked(model: &LegModel, leg: usize, q: &Vector3<f64>) -> Matrix3<f64> {
    let (s1, c1) = q[0].sin_cos();
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let a = model.l_thigh * s2 + model.l_calf * s23;
    let b = model.l_thigh * c2 + model.l_calf * c23;
    let lateral = model.side(leg) * model.l_hip;
    let rx = roll_matrix(q[0]);
    let d_roll = Vector3::new(0.0, -s1 * lateral + c1 * b, c1 * lateral + s1 * b);
    let d_pitch = rx * Vector3::new(b, 0.0, a);
    let d_knee = rx * Vector3::new(model.l_calf * c23, 0.0, model.l_calf * s23);
    Matrix3::from_columns(&[d_roll, d_pitch, d_knee])
}

/// Closed-form inverse kinematics (knee in `[0, π]`).
pub fn inverse_kinematics(model: &LegModel, leg: usize, foot: &Vector3<f64>) -> Result<Vector3<f64>> {
    if leg >= LEG_COUNT {
        return Err(Error::InvalidLeg(leg));
    }
    let d = foot - model.hip(leg);
    let lateral = model.side(leg) * model.l_hip;
    let r2 = d.y * d.y + d.z * d.z;
    let h2 = r2 - model.l_hip * model.l_hip;
    if h2 <= 0.0 {
        return Err(Error::IkUnreachable { leg });
    }
    let z_plane = -h2.sqrt();
    let q1 = wrap_angle(d.z.atan2(d.y) - z_plane.atan2(lateral));
    let (lt, lc) = (model.l_thigh, model.l_calf);
    let dist2 = d.x * d.x + z_plane * z_plane;
    let cos_knee = (dist2 - lt * lt - lc * lc) / (2.0 * lt * lc);
    if !(-1.0..=1.0).contains(&cos_knee) {
        return Err(Error::IkUnreachable { leg });
    }
    let q3 = cos_knee.acos();
    let q2 = d.x.atan2(-z_plane) - (lc * q3.sin()).atan2(lt + lc * q3.cos());
    let q = Vector3::new(q1, q2, q3);
    model.check(leg, &q).map_err(|_| Error::IkUnreachable { leg })?;
    Ok(q)
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

/// Body-frame linear velocity from the stance legs:
/// `v = −mean_j (J_j θ̇_j + ω × fk(θ_j))` over legs in contact.
pub fn conventional_leg_velocity(
    model: &LegModel,
    joints: &JointState,
    omega_body: &Vector3<f64>,
    contacts: &ContactFlags,
) -> Result<Vector3<f64>> {
    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for leg in (0..LEG_COUNT).filter(|&l| contacts[l]) {
        let q = joints.leg_angles(leg);
        let foot = fk_unchecked(model, leg, &q);
        let jac = jacobian_unchecked(model, leg, &q);
        sum += jac * joints.leg_velocities(leg) + omega_body.cross(&foot);
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoContact);
    }
    Ok(-sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn within_limits() -> impl Strategy<Value = (usize, Vector3<f64>)> {
        (0usize..4, -1.0f64..1.0, -2.0f64..2.0, 0.0f64..2.8).prop_map(|(l, a, b, c)| (l, Vector3::new(a, b, c)))
    }

    fn central_difference(model: &LegModel, leg: usize, q: &Vector3<f64>, h: f64) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for k in 0..3 {
            let mut dq = Vector3::zeros();
            dq[k] = h;
            let col = (fk_unchecked(model, leg, &(q + dq)) - fk_unchecked(model, leg, &(q - dq))) / (2.0 * h);
            m.set_column(k, &col);
        }
        m
    }

    #[test]
    fn zero_configuration_hangs_below_hip() {
        let m = LegModel::go2();
        for leg in 0..4 {
            let p = forward_kinematics(&m, leg, &Vector3::zeros()).unwrap();
            let expected = m.hip(leg) + Vector3::new(0.0, m.side(leg) * m.l_hip, -(m.l_thigh + m.l_calf));
            assert!((p - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn right_angle_knee() {
        let m = LegModel::go2();
        let p = forward_kinematics(&m, 0, &Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let leg_frame = p - m.hip(0) - Vector3::new(0.0, m.l_hip, 0.0);
        assert!((leg_frame - Vector3::new(m.l_calf, 0.0, -m.l_thigh)).norm() < 1e-15);
    }

    #[test]
    fn limits_are_enforced() {
        let m = LegModel::go2();
        let err = forward_kinematics(&m, 1, &Vector3::new(0.0, 0.0, -0.1)).unwrap_err();
        assert!(matches!(err, Error::JointLimit { leg: 1, joint: 2, .. }));
        assert!(matches!(forward_kinematics(&m, 4, &Vector3::zeros()), Err(Error::InvalidLeg(4))));
    }

    #[test]
    fn zero_configuration_jacobian_by_hand() {
        let m = LegModel::go2();
        let depth = m.l_thigh + m.l_calf;
        for leg in 0..4 {
            let j = leg_jacobian(&m, leg, &Vector3::zeros()).unwrap();
            // Roll axis x crossed with the lever (0, ±l_hip, −depth).
            let lever = Vector3::new(0.0, m.side(leg) * m.l_hip, -depth);
            assert!((j.column(0) - Vector3::x().cross(&lever)).norm() < 1e-15);
            assert!((j.column(1) - Vector3::new(depth, 0.0, 0.0)).norm() < 1e-15);
            assert!((j.column(2) - Vector3::new(m.l_calf, 0.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn extended_leg_is_singular() {
        let m = LegModel::go2();
        let j = leg_jacobian(&m, 2, &Vector3::new(0.3, -0.4, 0.0)).unwrap();
        assert!(j.rank(1e-12) <= 2);
    }

    #[test]
    fn standing_turn_in_place() {
        let m = LegModel::go2();
        let mut joints = JointState::default();
        for leg in 0..4 {
            joints.angles.fixed_rows_mut::<3>(leg * 3).copy_from(&Vector3::new(0.0, -0.6, 1.2));
        }
        let omega = Vector3::new(0.0, 0.0, 1.0);
        let v = conventional_leg_velocity(&m, &joints, &omega, &[true; 4]).unwrap();
        let mut expected = Vector3::zeros();
        for leg in 0..4 {
            expected -= omega.cross(&fk_unchecked(&m, leg, &joints.leg_angles(leg)));
        }
        assert!((v - expected / 4.0).norm() < 1e-15);
        let still = conventional_leg_velocity(&m, &joints, &Vector3::zeros(), &[true; 4]).unwrap();
        assert_eq!(still, Vector3::zeros());
        assert!(matches!(
            conventional_leg_velocity(&m, &joints, &omega, &[false; 4]),
            Err(Error::NoContact)
        ));
    }

    proptest! {
        #[test]
        fn jacobian_matches_central_differences((leg, q) in within_limits()) {
            let m = LegModel::go2();
            let j = leg_jacobian(&m, leg, &q).unwrap();
            let num = central_difference(&m, leg, &q, 1e-6);
            prop_assert!((j - num).abs().max() < 1e-6);
        }

        #[test]
        fn taylor_remainder_is_second_order((leg, q) in within_limits(), d in prop::array::uniform3(-1.0f64..1.0)) {
            let m = LegModel::go2();
            let delta = Vector3::from(d) * 1e-4;
            let rem = fk_unchecked(&m, leg, &(q + delta)) - fk_unchecked(&m, leg, &q) - jacobian_unchecked(&m, leg, &q) * delta;
            prop_assert!(rem.norm() < 1e-7);
        }

        #[test]
        fn inverse_kinematics_roundtrip(leg in 0usize..4, a in -0.5f64..0.5, b in -1.0f64..0.6, c in 0.3f64..1.8) {
            let m = LegModel::go2();
            let q = Vector3::new(a, b, c);
            let p = fk_unchecked(&m, leg, &q);
            let back = inverse_kinematics(&m, leg, &p).unwrap();
            prop_assert!((back - q).norm() < 1e-9);
        }
    }
}
