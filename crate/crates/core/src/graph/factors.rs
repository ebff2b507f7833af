//! Residuals and Jacobians of the non-IMU factors.
//!
//! Pose Jacobians are with respect to the right perturbation `T · exp(δ)`.

use nalgebra::{DVector, Matrix6, Matrix6xX, Vector6};

use crate::error::Result;
use crate::lie::{adjoint, exp_se3, log_se3, right_jacobian_se3, right_jacobian_se3_inv, Pose, Twist};
use crate::nn::network::{LegNetwork, OnlineParams};
use crate::nn::window::InputWindow;
use crate::sim::AxisMask;

/// Leg odometry residual `log(T_prev⁻¹ T_cur exp(ξ dt)⁻¹)` and its Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct LegResidual {
    pub residual: Vector6<f64>,
    pub d_prev: Matrix6<f64>,
    pub d_cur: Matrix6<f64>,
    /// W.r.t. the predicted twist `ξ`.
    pub d_twist: Matrix6<f64>,
}

pub fn leg_residual(prev: &Pose, cur: &Pose, twist: &Vector6<f64>, dt: f64) -> Result<LegResidual> {
    let step = exp_se3(&Twist::from_vector(twist), dt);
    let m = prev.between(cur).compose(&step.inverse());
    let r = log_se3(&m)?.to_vector();
    let jri = right_jacobian_se3_inv(&r);
    Ok(LegResidual {
        residual: r,
        d_prev: -jri * adjoint(&m.inverse()),
        d_cur: jri * adjoint(&step),
        d_twist: -jri * right_jacobian_se3(&(-twist * dt)) * dt,
    })
}

/// Leg factor whose twist comes from the network under online parameters `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLegResidual {
    pub twist: Vector6<f64>,
    pub leg: LegResidual,
    /// `∂r/∂m` (6 × online parameter count).
    pub d_online: Matrix6xX<f64>,
}

pub fn neural_leg_residual(
    network: &LegNetwork,
    prev: &Pose,
    cur: &Pose,
    online: &OnlineParams,
    window: &InputWindow,
    dt: f64,
) -> Result<NeuralLegResidual> {
    let (twist, jac) = network.twist_jacobian(window, online)?;
    let leg = leg_residual(prev, cur, &twist, dt)?;
    let d_online = leg.d_twist * jac;
    Ok(NeuralLegResidual { twist, leg, d_online })
}

/// Masked pose observation `log(T_obs⁻¹ T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub pose: Pose,
    pub masked: AxisMask,
    /// Per-axis standard deviation `[rot (rad) ×3, trans (m) ×3]`.
    pub sigma: Vector6<f64>,
}

impl PoseObservation {
    /// Whitened residual and Jacobian; masked axes have zero rows.
    pub fn whitened(&self, state: &Pose) -> Result<(Vector6<f64>, Matrix6<f64>)> {
        let r = self.pose.local(state)?;
        let mut j = right_jacobian_se3_inv(&r);
        let mut rw = Vector6::zeros();
        for k in 0..6 {
            let w = if self.masked.is_masked(k) { 0.0 } else { 1.0 / self.sigma[k] };
            rw[k] = r[k] * w;
            j.row_mut(k).scale_mut(w);
        }
        Ok((rw, j))
    }
}

/// `(m_cur − m_prev) / σ_walk`.
pub fn transition_residual(prev: &DVector<f64>, cur: &DVector<f64>, sigma_walk: f64) -> DVector<f64> {
    (cur - prev) / sigma_walk
}

/// `(m − anchor) / σ_fix`.
pub fn fixation_residual(m: &DVector<f64>, anchor: &DVector<f64>, sigma_fix: f64) -> DVector<f64> {
    (m - anchor) / sigma_fix
}
