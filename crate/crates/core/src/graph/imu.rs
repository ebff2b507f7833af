//! On-manifold IMU preintegration between keyframes.
//!
//! Biases are ordered `[accel; gyro]`. The preintegrated noise covariance is
//! ordered `[δφ, δv, δp]`, matching the residual `[r_R, r_v, r_p]`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_so3, log_so3, right_jacobian_so3, right_jacobian_so3_inv, skew, Pose, Rotation};
use crate::sim::motion::gravity;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;
/// Jacobian of the 15-dim IMU residual w.r.t. one 15-dim navigation state.
pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;

/// One IMU reading held constant over `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuMeasurement {
    pub t: f64,
    pub dt: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Per-sample white noise and bias random-walk densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    /// Per-sample accelerometer noise (m/s²).
    pub accel: f64,
    /// Per-sample gyroscope noise (rad/s).
    pub gyro: f64,
    /// Accelerometer bias walk (m/s² per √s).
    pub accel_bias_walk: f64,
    /// Gyroscope bias walk (rad/s per √s).
    pub gyro_bias_walk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub dt: f64,
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    /// Bias the deltas were integrated with.
    pub bias: Vector6<f64>,
    pub covariance: Matrix9,
    pub j_r_bg: Matrix3<f64>,
    pub j_v_ba: Matrix3<f64>,
    pub j_v_bg: Matrix3<f64>,
    pub j_p_ba: Matrix3<f64>,
    pub j_p_bg: Matrix3<f64>,
}

pub fn preintegrate(samples: &[ImuMeasurement], bias: &Vector6<f64>, noise: &ImuNoise) -> Result<PreintegratedImu> {
    if samples.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let ba = bias.fixed_rows::<3>(0).into_owned();
    let bg = bias.fixed_rows::<3>(3).into_owned();
    let mut pim = PreintegratedImu {
        dt: 0.0,
        delta_r: Rotation::identity(),
        delta_v: Vector3::zeros(),
        delta_p: Vector3::zeros(),
        bias: *bias,
        covariance: Matrix9::zeros(),
        j_r_bg: Matrix3::zeros(),
        j_v_ba: Matrix3::zeros(),
        j_v_bg: Matrix3::zeros(),
        j_p_ba: Matrix3::zeros(),
        j_p_bg: Matrix3::zeros(),
    };
    let i3 = Matrix3::identity();
    let mut prev_t = f64::NEG_INFINITY;
    for s in samples {
        if !(s.dt > 0.0) || s.t < prev_t {
            return Err(Error::Config("IMU samples must be time ordered with positive dt".into()));
        }
        prev_t = s.t;
        let dt = s.dt;
        let a = s.accel - ba;
        let w = (s.gyro - bg) * dt;
        let dr = exp_so3(&w);
        let jr = right_jacobian_so3(&w);
        let r = *pim.delta_r.matrix();
        let a_hat = skew(&a);

        let mut am = Matrix9::identity();
        am.fixed_view_mut::<3, 3>(0, 0).copy_from(&dr.matrix().transpose());
        am.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r * a_hat * dt));
        am.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r * a_hat * (0.5 * dt * dt)));
        am.fixed_view_mut::<3, 3>(6, 3).copy_from(&(i3 * dt));
        let mut bm = SMatrix::<f64, 9, 6>::zeros();
        bm.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        bm.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * dt));
        bm.fixed_view_mut::<3, 3>(6, 3).copy_from(&(r * (0.5 * dt * dt)));
        let q = Vector6::new(
            noise.gyro.powi(2),
            noise.gyro.powi(2),
            noise.gyro.powi(2),
            noise.accel.powi(2),
            noise.accel.powi(2),
            noise.accel.powi(2),
        );
        pim.covariance = am * pim.covariance * am.transpose() + bm * SMatrix::<f64, 6, 6>::from_diagonal(&q) * bm.transpose();

        // Bias Jacobians use the pre-update rotation and velocity Jacobians.
        pim.j_p_ba += pim.j_v_ba * dt - r * (0.5 * dt * dt);
        pim.j_p_bg += pim.j_v_bg * dt - r * a_hat * pim.j_r_bg * (0.5 * dt * dt);
        pim.j_v_ba -= r * dt;
        pim.j_v_bg -= r * a_hat * pim.j_r_bg * dt;
        pim.j_r_bg = dr.matrix().transpose() * pim.j_r_bg - jr * dt;

        pim.delta_p += pim.delta_v * dt + r * a * (0.5 * dt * dt);
        pim.delta_v += r * a * dt;
        pim.delta_r = pim.delta_r.compose(&dr);
        pim.dt += dt;
    }
    pim.covariance = (pim.covariance + pim.covariance.transpose()) * 0.5;
    Ok(pim)
}

/// Navigation state `[T, v, b]` as seen by the IMU factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: Vector6<f64>,
}

/// Residual and Jacobians of the preintegration term (unwhitened).
#[derive(Debug, Clone)]
pub struct ImuLinearization {
    pub residual: Vector9,
    /// W.r.t. `[δφ, δρ, δv, δba, δbg]` of the earlier state.
    pub d_i: SMatrix<f64, 9, 15>,
    pub d_j: SMatrix<f64, 9, 15>,
}

impl PreintegratedImu {
    fn corrected(&self, bias: &Vector6<f64>) -> (Rotation, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let dba = bias.fixed_rows::<3>(0) - self.bias.fixed_rows::<3>(0);
        let dbg = bias.fixed_rows::<3>(3) - self.bias.fixed_rows::<3>(3);
        let phi = self.j_r_bg * dbg;
        let dr = self.delta_r.compose(&exp_so3(&phi));
        let dv = self.delta_v + self.j_v_ba * dba + self.j_v_bg * dbg;
        let dp = self.delta_p + self.j_p_ba * dba + self.j_p_bg * dbg;
        (dr, dv, dp, phi)
    }

    /// State at the end of the interval starting from `start` with its bias.
    pub fn predict(&self, start: &NavState) -> NavState {
        let (dr, dv, dp, _) = self.corrected(&start.bias);
        let g = gravity();
        let r = start.pose.rotation;
        let t = self.dt;
        NavState {
            pose: Pose::new(
                r.compose(&dr).renormalized(),
                start.pose.translation + start.velocity * t + g * (0.5 * t * t) + r.rotate(&dp),
            ),
            velocity: start.velocity + g * t + r.rotate(&dv),
            bias: start.bias,
        }
    }

    pub fn linearize(&self, si: &NavState, sj: &NavState) -> Result<ImuLinearization> {
        let (dr, dv, dp, phi) = self.corrected(&si.bias);
        let g = gravity();
        let t = self.dt;
        let ri = si.pose.rotation;
        let rj = sj.pose.rotation;
        let rit = ri.transpose();
        let rel_r = dr.inverse().compose(&rit.compose(&rj));
        let r_r = log_so3(&rel_r)?;
        let u_v = rit.rotate(&(sj.velocity - si.velocity - g * t));
        let u_p = rit.rotate(&(sj.pose.translation - si.pose.translation - si.velocity * t - g * (0.5 * t * t)));
        let mut residual = Vector9::zeros();
        residual.fixed_rows_mut::<3>(0).copy_from(&r_r);
        residual.fixed_rows_mut::<3>(3).copy_from(&(u_v - dv));
        residual.fixed_rows_mut::<3>(6).copy_from(&(u_p - dp));

        let jri = right_jacobian_so3_inv(&r_r);
        let rit_m = *rit.matrix();
        let mut d_i = SMatrix::<f64, 9, 15>::zeros();
        let mut d_j = SMatrix::<f64, 9, 15>::zeros();
        d_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jri * rj.transpose().matrix() * ri.matrix()));
        d_i.fixed_view_mut::<3, 3>(0, 12)
            .copy_from(&(-jri * exp_so3(&r_r).matrix().transpose() * right_jacobian_so3(&phi) * self.j_r_bg));
        d_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jri);

        d_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&u_v));
        d_i.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-rit_m));
        d_i.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-self.j_v_ba));
        d_i.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-self.j_v_bg));
        d_j.fixed_view_mut::<3, 3>(3, 6).copy_from(&rit_m);

        d_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&skew(&u_p));
        d_i.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-Matrix3::identity()));
        d_i.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-rit_m * t));
        d_i.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-self.j_p_ba));
        d_i.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-self.j_p_bg));
        d_j.fixed_view_mut::<3, 3>(6, 3).copy_from(&(rit_m * rj.matrix()));
        Ok(ImuLinearization { residual, d_i, d_j })
    }
}
