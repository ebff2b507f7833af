//! Prescribed planar body motion.
//!
//! The body trajectory is piecewise defined on the IMU sampling grid: inside each
//! IMU period the world acceleration and the body angular rate are constant, so
//! zero-order-hold integration of noise-free IMU samples reproduces it exactly.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{MotionConfig, MotionSegment, ScenarioConfig, GRAVITY};
use crate::lie::{Pose, Rotation};

/// Random stream used for command generation.
pub(crate) const MOTION_STREAM: u64 = 0;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Speed and yaw-rate commands as smooth functions of time.
#[derive(Debug, Clone)]
pub struct CommandProfile {
    initial: (f64, f64),
    ramp: f64,
    segments: Vec<MotionSegment>,
}

impl CommandProfile {
    pub fn from_config(motion: &MotionConfig, duration: f64, seed: u64) -> Self {
        let segments = match &motion.random {
            Some(r) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(MOTION_STREAM);
                let mut segments = Vec::new();
                let mut t = 0.0;
                while t < duration {
                    let (speed, yaw_rate) = if rng.gen::<f64>() < r.stand_probability {
                        (0.0, 0.0)
                    } else {
                        (
                            rng.gen_range(r.min_speed..=r.max_speed),
                            rng.gen_range(-r.max_yaw_rate..=r.max_yaw_rate),
                        )
                    };
                    segments.push(MotionSegment { start: t, speed, yaw_rate });
                    t += rng.gen_range(r.min_hold..=r.max_hold);
                }
                segments
            }
            None => motion.segments.clone(),
        };
        Self {
            initial: (motion.initial_speed, motion.initial_yaw_rate),
            ramp: motion.ramp,
            segments,
        }
    }

    /// `(speed, yaw_rate)` at time `t`.
    pub fn command(&self, t: f64) -> (f64, f64) {
        let idx = self.segments.iter().rposition(|s| s.start <= t);
        let Some(i) = idx else {
            return self.initial;
        };
        let seg = &self.segments[i];
        let prev = if i == 0 {
            self.initial
        } else {
            (self.segments[i - 1].speed, self.segments[i - 1].yaw_rate)
        };
        let u = if self.ramp > 0.0 {
            ((t - seg.start) / self.ramp).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let b = 0.5 - 0.5 * (std::f64::consts::PI * u).cos();
        (prev.0 + b * (seg.speed - prev.0), prev.1 + b * (seg.yaw_rate - prev.1))
    }
}

/// Body state at the start of one IMU period.
#[derive(Debug, Clone, Copy)]
pub struct BodySample {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    /// World-frame acceleration held over the period.
    pub accel: Vector3<f64>,
    /// Body-frame angular rate held over the period.
    pub omega: Vector3<f64>,
}

/// Continuous-time body state.
#[derive(Debug, Clone, Copy)]
pub struct BodyState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub omega: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct BodyTrajectory {
    dt: f64,
    samples: Vec<BodySample>,
}

impl BodyTrajectory {
    pub fn generate(config: &ScenarioConfig) -> Self {
        let profile = CommandProfile::from_config(&config.motion, config.duration, config.seed);
        Self::from_profile(&profile, config.duration, config.rates.imu, config.gait.body_height)
    }

    pub fn from_profile(profile: &CommandProfile, duration: f64, imu_rate: f64, height: f64) -> Self {
        let dt = 1.0 / imu_rate;
        let n = (duration * imu_rate).round() as usize;
        let (speed0, _) = profile.command(0.0);
        let mut pose = Pose::from_translation(Vector3::new(0.0, 0.0, height));
        let mut velocity = Vector3::new(speed0, 0.0, 0.0);
        let mut samples = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = k as f64 * dt;
            let (_, yaw_rate) = profile.command(t);
            let omega = Vector3::new(0.0, 0.0, yaw_rate);
            let next_rotation = pose.rotation.compose(&Rotation::exp(&(omega * dt))).renormalized();
            let (next_speed, _) = profile.command(t + dt);
            let heading = next_rotation.yaw();
            let target = Vector3::new(next_speed * heading.cos(), next_speed * heading.sin(), 0.0);
            let accel = (target - velocity) / dt;
            samples.push(BodySample { pose, velocity, accel, omega });
            pose = Pose::new(
                next_rotation,
                pose.translation + velocity * dt + accel * (0.5 * dt * dt),
            );
            velocity = target;
        }
        Self { dt, samples }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[BodySample] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    /// Index of the IMU period containing `t`.
    pub fn period_index(&self, t: f64) -> usize {
        let k = (t / self.dt + 1e-9).floor();
        (k.max(0.0) as usize).min(self.samples.len() - 1)
    }

    /// Specific force (body frame, gravity included) held over period `k`.
    pub fn specific_force(&self, k: usize) -> Vector3<f64> {
        let s = &self.samples[k];
        s.pose.rotation.transpose().rotate(&(s.accel - gravity()))
    }

    /// State at any time; outside the generated span the body keeps its
    /// boundary velocity and orientation.
    pub fn state_at(&self, t: f64) -> BodyState {
        let last = self.samples.len() - 1;
        if t < 0.0 || t > last as f64 * self.dt {
            let (s, t0) = if t < 0.0 {
                (&self.samples[0], 0.0)
            } else {
                (&self.samples[last], last as f64 * self.dt)
            };
            return BodyState {
                pose: Pose::new(s.pose.rotation, s.pose.translation + s.velocity * (t - t0)),
                velocity: s.velocity,
                accel: Vector3::zeros(),
                omega: Vector3::zeros(),
            };
        }
        let k = self.period_index(t);
        let s = &self.samples[k];
        let tau = t - k as f64 * self.dt;
        BodyState {
            pose: Pose::new(
                s.pose.rotation.compose(&Rotation::exp(&(s.omega * tau))),
                s.pose.translation + s.velocity * tau + s.accel * (0.5 * tau * tau),
            ),
            velocity: s.velocity + s.accel * tau,
            accel: s.accel,
            omega: s.omega,
        }
    }
}
