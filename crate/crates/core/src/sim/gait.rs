//! Kinematic trot generator.
//!
//! Diagonal leg pairs (LF+RH, LH+RF) alternate half a period apart. A stance
//! foot touches down where the nominal stance point will be at mid-stance and,
//! without ground disturbances, stays fixed in the world until lift-off.

use nalgebra::Vector3;

use super::config::{GaitConfig, ScenarioConfig};
use super::motion::{BodyState, BodyTrajectory};
use crate::error::{Error, Result};
use crate::kinematics::{inverse_kinematics, jacobian_unchecked, LegModel, Vector12, LEG_COUNT};

/// Gait phase offset per leg (LF, LH, RH, RF).
const PHASE_OFFSETS: [f64; LEG_COUNT] = [0.0, 0.5, 0.0, 0.5];
/// Fraction of the stance spent sinking into deformable ground.
const SINK_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stance {
    pub start: f64,
    pub end: f64,
    /// Undisturbed world foot position.
    pub touchdown: Vector3<f64>,
}

impl Stance {
    pub fn mid(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Ground-induced deviation of one stance from the undisturbed plan.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StanceDisturbance {
    /// Foot slide speed as a fraction of horizontal body speed, opposite to travel.
    pub slip: f64,
    /// Final foot penetration depth (m).
    pub sink_depth: f64,
}

/// Per-leg disturbances aligned with [`GaitPlan::stances`].
pub type Disturbances = [Vec<StanceDisturbance>; LEG_COUNT];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub in_contact: bool,
    /// Progress through the current stance in `[0, 1)` while in contact.
    pub stance_progress: f64,
    pub stance_index: usize,
}

/// Joint-space truth of all legs at one instant.
#[derive(Debug, Clone, Copy)]
pub struct LegsState {
    pub body: BodyState,
    pub angles: Vector12,
    pub velocities: Vector12,
    pub feet: [FootState; LEG_COUNT],
}

impl LegsState {
    pub fn contacts(&self) -> [bool; LEG_COUNT] {
        self.feet.map(|f| f.in_contact)
    }
}

/// Body trajectory plus the stance timeline of every leg.
#[derive(Debug, Clone)]
pub struct GaitPlan {
    pub body: BodyTrajectory,
    pub gait: GaitConfig,
    pub model: LegModel,
    stances: [Vec<Stance>; LEG_COUNT],
    /// Cycle number of `stances[leg][0]`.
    first_cycle: i64,
}

fn smoothstep(u: f64) -> (f64, f64) {
    (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u))
}

fn horizontal(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

/// Plans the trot for a scenario and checks that every joint tick is reachable.
pub fn generate_gait(config: &ScenarioConfig) -> Result<GaitPlan> {
    let plan = GaitPlan::new(BodyTrajectory::generate(config), config.gait.clone(), config.robot.clone());
    let n = (config.duration * config.rates.joints).round() as usize;
    for j in 0..=n {
        plan.legs_state(j as f64 / config.rates.joints, None)?;
    }
    Ok(plan)
}

impl GaitPlan {
    pub fn new(body: BodyTrajectory, gait: GaitConfig, model: LegModel) -> Self {
        let period = gait.period;
        let first_cycle = -2;
        let last_cycle = (body.duration() / period).ceil() as i64 + 2;
        let stances = std::array::from_fn(|leg| {
            let nominal = Self::nominal_foot(&model, &gait, leg);
            (first_cycle..=last_cycle)
                .map(|n| {
                    let start = (n as f64 - PHASE_OFFSETS[leg]) * period;
                    let end = start + gait.duty_factor * period;
                    let mid = body.state_at(0.5 * (start + end)).pose;
                    let mut touchdown = mid.transform_point(&nominal);
                    touchdown.z = 0.0;
                    Stance { start, end, touchdown }
                })
                .collect()
        });
        Self {
            body,
            gait,
            model,
            stances,
            first_cycle,
        }
    }

    /// Stance foot position in the body frame with the body at nominal height.
    pub fn nominal_foot(model: &LegModel, gait: &GaitConfig, leg: usize) -> Vector3<f64> {
        model.hip(leg) + Vector3::new(0.0, model.side(leg) * model.l_hip, -gait.body_height)
    }

    pub fn stances(&self, leg: usize) -> &[Stance] {
        &self.stances[leg]
    }

    /// Stance index whose cycle contains `t`, and the phase inside that cycle.
    fn cycle(&self, leg: usize, t: f64) -> (usize, f64) {
        let u = t / self.gait.period + PHASE_OFFSETS[leg];
        let n = u.floor();
        let idx = (n as i64 - self.first_cycle).clamp(0, self.stances[leg].len() as i64 - 2) as usize;
        (idx, u - n)
    }

    fn horizontal_position(&self, t: f64) -> Vector3<f64> {
        horizontal(&self.body.state_at(t).pose.translation)
    }

    fn stance_foot(&self, leg: usize, idx: usize, t: f64, d: StanceDisturbance) -> (Vector3<f64>, Vector3<f64>) {
        let s = &self.stances[leg][idx];
        // Slip is centred on mid-stance so the stance stays inside the workspace.
        let mut p = s.touchdown + (self.horizontal_position(s.mid()) - self.horizontal_position(t)) * d.slip;
        let mut v = -horizontal(&self.body.state_at(t).velocity) * d.slip;
        if d.sink_depth > 0.0 {
            let span = SINK_FRACTION * (s.end - s.start);
            let u = ((t - s.start) / span).clamp(0.0, 1.0);
            let (g, dg) = smoothstep(u);
            p.z -= d.sink_depth * g;
            if u < 1.0 && u > 0.0 {
                v.z -= d.sink_depth * dg / span;
            }
        }
        (p, v)
    }

    pub fn foot_state(&self, leg: usize, t: f64, disturbances: Option<&Disturbances>) -> FootState {
        let dist = |idx: usize| disturbances.map_or(StanceDisturbance::default(), |d| d[leg][idx]);
        let (idx, phase) = self.cycle(leg, t);
        let duty = self.gait.duty_factor;
        if phase < duty {
            let (position, velocity) = self.stance_foot(leg, idx, t, dist(idx));
            return FootState {
                position,
                velocity,
                in_contact: true,
                stance_progress: phase / duty,
                stance_index: idx,
            };
        }
        let lift = &self.stances[leg][idx];
        let land = &self.stances[leg][idx + 1];
        let (p0, _) = self.stance_foot(leg, idx, lift.end, dist(idx));
        let (p1, _) = self.stance_foot(leg, idx + 1, land.start, dist(idx + 1));
        let span = land.start - lift.end;
        let u = ((t - lift.end) / span).clamp(0.0, 1.0);
        let (b, db) = smoothstep(u);
        let h = self.gait.swing_height;
        let pi = std::f64::consts::PI;
        let mut position = p0 + (p1 - p0) * b;
        position.z += h * (pi * u).sin();
        let mut velocity = (p1 - p0) * (db / span);
        velocity.z += h * pi * (pi * u).cos() / span;
        FootState {
            position,
            velocity,
            in_contact: false,
            stance_progress: 0.0,
            stance_index: idx,
        }
    }

    /// Joint angles and rates that realise the planned foot motion at time `t`.
    pub fn legs_state(&self, t: f64, disturbances: Option<&Disturbances>) -> Result<LegsState> {
        let body = self.body.state_at(t);
        let rt = body.pose.rotation.transpose();
        let mut angles = Vector12::zeros();
        let mut velocities = Vector12::zeros();
        let feet: [FootState; LEG_COUNT] = std::array::from_fn(|leg| self.foot_state(leg, t, disturbances));
        for (leg, foot) in feet.iter().enumerate() {
            let p_body = rt.rotate(&(foot.position - body.pose.translation));
            let v_body = -body.omega.cross(&p_body) + rt.rotate(&(foot.velocity - body.velocity));
            let q = inverse_kinematics(&self.model, leg, &p_body)?;
            let qd = jacobian_unchecked(&self.model, leg, &q)
                .try_inverse()
                .ok_or(Error::IkUnreachable { leg })?
                * v_body;
            angles.fixed_rows_mut::<3>(leg * 3).copy_from(&q);
            velocities.fixed_rows_mut::<3>(leg * 3).copy_from(&qd);
        }
        Ok(LegsState {
            body,
            angles,
            velocities,
            feet,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{conventional_leg_velocity, fk_unchecked, JointState};
    use crate::sim::config::MotionConfig;

    fn plan(speed: f64, yaw: f64) -> GaitPlan {
        let mut cfg = ScenarioConfig::nominal(0);
        cfg.duration = 6.0;
        cfg.motion = MotionConfig::constant(speed, yaw);
        generate_gait(&cfg).unwrap()
    }

    #[test]
    fn standing_robot_steps_in_place() {
        let p = plan(0.0, 0.0);
        let mut stance_ticks = [0usize; 4];
        let n = 2500;
        for j in 0..n {
            let t = 1.0 + j as f64 / 500.0;
            let a = p.legs_state(t, None).unwrap();
            let b = p.legs_state(t + p.gait.period, None).unwrap();
            assert!((a.velocities - b.velocities).norm() < 1e-9);
            assert!((a.body.pose.translation - b.body.pose.translation).norm() < 1e-12);
            for (leg, f) in a.feet.iter().enumerate() {
                stance_ticks[leg] += f.in_contact as usize;
            }
        }
        for c in stance_ticks {
            assert!((c as f64 / n as f64 - p.gait.duty_factor).abs() < 4e-3);
        }
    }

    #[test]
    fn stance_feet_do_not_drift() {
        let p = plan(0.9, 0.3);
        for j in 0..3000 {
            let t = j as f64 / 500.0;
            let s = p.legs_state(t, None).unwrap();
            for leg in 0..4 {
                if !s.feet[leg].in_contact {
                    continue;
                }
                let q = s.angles.fixed_rows::<3>(leg * 3).into_owned();
                let world = s.body.pose.transform_point(&fk_unchecked(&p.model, leg, &q));
                let anchor = p.stances(leg)[s.feet[leg].stance_index].touchdown;
                assert!((world - anchor).norm() < 1e-9, "leg {leg} t {t}");
            }
        }
    }

    #[test]
    fn kinematic_odometry_is_exact_without_slip() {
        let p = plan(1.1, -0.25);
        for j in 0..2000 {
            let t = 0.5 + j as f64 / 500.0;
            let s = p.legs_state(t, None).unwrap();
            let joints = JointState {
                angles: s.angles,
                velocities: s.velocities,
                torques: Vector12::zeros(),
            };
            let v = conventional_leg_velocity(&p.model, &joints, &s.body.omega, &s.contacts()).unwrap();
            let truth = s.body.pose.rotation.transpose().rotate(&s.body.velocity);
            assert!((v - truth).norm() < 1e-9);
        }
    }

    #[test]
    fn swing_lifts_the_foot() {
        let p = plan(0.5, 0.0);
        let peak = (0..500)
            .map(|j| p.foot_state(0, 1.0 + j as f64 / 500.0, None).position.z)
            .fold(f64::MIN, f64::max);
        assert!((peak - p.gait.swing_height).abs() < 1e-3);
    }

    #[test]
    fn unreachable_height_is_reported() {
        let mut cfg = ScenarioConfig::nominal(0);
        cfg.duration = 1.0;
        cfg.gait.body_height = 0.6;
        assert!(matches!(generate_gait(&cfg), Err(Error::IkUnreachable { .. })));
    }
}
