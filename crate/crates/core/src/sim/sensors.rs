//! Sensor synthesis on top of a gait plan.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ScenarioConfig, GRAVITY};
use super::frame::{ImuSample, LidarObservation, SimFrame, TruthState};
use super::gait::{Disturbances, GaitPlan, LegsState, StanceDisturbance};
use super::motion::BodyTrajectory;
use crate::error::Result;
use crate::kinematics::{jacobian_unchecked, JointState, Vector12, LEG_COUNT};
use crate::lie::{exp_se3, Twist};

const SLIP_STREAM: u64 = 1;
const IMU_STREAM: u64 = 2;
const JOINT_STREAM: u64 = 3;
const LIDAR_STREAM: u64 = 4;

/// Load-sharing weight floor so that a freshly landed foot already carries load.
const LOAD_WEIGHT_FLOOR: f64 = 0.05;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    n * sigma
}

fn gauss3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(gauss(rng, sigma), gauss(rng, sigma), gauss(rng, sigma))
}

/// Draws the slip and sinkage of every planned stance from the terrain and
/// payload active at touchdown.
pub fn draw_disturbances(plan: &GaitPlan, config: &ScenarioConfig, seed: u64) -> Disturbances {
    let mut rng = stream(seed, SLIP_STREAM);
    std::array::from_fn(|leg| {
        plan.stances(leg)
            .iter()
            .map(|s| {
                let t = s.start.max(0.0);
                let terrain = &config.terrain_at(t).profile;
                let slip = if terrain.slip_gain > 0.0 {
                    rng.gen_range(0.0..2.0 * terrain.slip_gain)
                } else {
                    0.0
                };
                StanceDisturbance {
                    slip,
                    sink_depth: terrain.sinkage * config.total_mass_at(t) / config.base_mass,
                }
            })
            .collect()
    })
}

/// Ground reaction forces (world frame) on each foot.
pub fn ground_reaction_forces(state: &LegsState, config: &ScenarioConfig, t: f64) -> [Vector3<f64>; LEG_COUNT] {
    let terrain = &config.terrain_at(t).profile;
    let total = config.total_mass_at(t) * GRAVITY * terrain.force_scale;
    let weights = state.feet.map(|f| {
        if f.in_contact {
            LOAD_WEIGHT_FLOOR + (std::f64::consts::PI * f.stance_progress).sin()
        } else {
            0.0
        }
    });
    let sum: f64 = weights.iter().sum();
    std::array::from_fn(|leg| {
        if weights[leg] == 0.0 {
            return Vector3::zeros();
        }
        let normal = total * weights[leg] / sum;
        let slide = state.feet[leg].velocity;
        let tangential = -terrain.slip_friction * normal * Vector3::new(slide.x, slide.y, 0.0);
        Vector3::new(tangential.x, tangential.y, normal)
    })
}

/// Renders every sensor stream at the joint rate. IMU samples are attached to
/// the first joint tick at or after their timestamp; LiDAR observations to
/// the keyframe ticks.
pub fn synthesize_sensors(plan: &GaitPlan, config: &ScenarioConfig, seed: u64) -> Result<Vec<SimFrame>> {
    let noise = &config.noise;
    let disturbances = draw_disturbances(plan, config, seed);
    let lidar = lidar_observation(&plan.body, config, seed);
    let mut imu_rng = stream(seed, IMU_STREAM);
    let mut joint_rng = stream(seed, JOINT_STREAM);

    let joint_rate = config.rates.joints;
    let imu_rate = config.rates.imu;
    let per_key = config.joints_per_keyframe();
    let n_ticks = (config.duration * joint_rate).round() as usize;
    let n_imu = plan.body.samples().len();
    let imu_dt = 1.0 / imu_rate;

    let mut bias = Vector6::zeros();
    for k in 0..3 {
        bias[k] = gauss(&mut imu_rng, noise.accel_bias_init);
        bias[k + 3] = gauss(&mut imu_rng, noise.gyro_bias_init);
    }
    let mut next_imu = 0usize;
    let mut frames = Vec::with_capacity(n_ticks + 1);
    for j in 0..=n_ticks {
        let t = j as f64 / joint_rate;
        let state = plan.legs_state(t, Some(&disturbances))?;
        let grf = ground_reaction_forces(&state, config, t);

        let rt = state.body.pose.rotation.transpose();
        let mut torques = Vector12::zeros();
        for leg in 0..LEG_COUNT {
            let q = state.angles.fixed_rows::<3>(leg * 3).into_owned();
            let tau = -jacobian_unchecked(&plan.model, leg, &q).transpose() * rt.rotate(&grf[leg]);
            torques.fixed_rows_mut::<3>(leg * 3).copy_from(&tau);
        }
        let mut joints = JointState {
            angles: state.angles,
            velocities: state.velocities,
            torques,
        };
        for i in 0..12 {
            joints.angles[i] += gauss(&mut joint_rng, noise.encoder);
            joints.velocities[i] += gauss(&mut joint_rng, noise.joint_velocity);
            joints.torques[i] += gauss(&mut joint_rng, noise.torque);
        }
        let contacts = state.contacts();
        let true_foot_forces = grf.map(|f| f.z);
        let mut foot_forces = [0.0; LEG_COUNT];
        for leg in 0..LEG_COUNT {
            let n = gauss(&mut joint_rng, noise.foot_force);
            if contacts[leg] {
                foot_forces[leg] = (true_foot_forces[leg] + n).max(0.0);
            }
        }

        // IMU sample k lands on joint tick ceil(k * joint_rate / imu_rate).
        let mut imu = None;
        while next_imu < n_imu && ((next_imu as f64 * joint_rate / imu_rate) - 1e-9).ceil() as usize == j {
            let k = next_imu;
            let sample = &plan.body.samples()[k];
            let accel = plan.body.specific_force(k) + bias.fixed_rows::<3>(0) + gauss3(&mut imu_rng, noise.accel);
            let gyro = sample.omega + bias.fixed_rows::<3>(3) + gauss3(&mut imu_rng, noise.gyro);
            imu = Some(ImuSample {
                t: k as f64 * imu_dt,
                accel,
                gyro,
                bias: bias.into(),
            });
            let sd = imu_dt.sqrt();
            for i in 0..3 {
                bias[i] += gauss(&mut imu_rng, noise.accel_bias_walk * sd);
                bias[i + 3] += gauss(&mut imu_rng, noise.gyro_bias_walk * sd);
            }
            next_imu += 1;
        }

        let segment = config.terrain_at(t);
        frames.push(SimFrame {
            t,
            truth: TruthState {
                pose: state.body.pose,
                velocity: state.body.velocity,
            },
            imu,
            joints,
            foot_forces,
            true_foot_forces,
            contacts,
            lidar: if j % per_key == 0 { lidar.get(j / per_key).cloned() } else { None },
            terrain: segment.label(),
            payload: config.payload_at(t),
        });
    }
    Ok(frames)
}

/// Noisy pose observations at the LiDAR rate with the active axis mask.
pub fn lidar_observation(body: &BodyTrajectory, config: &ScenarioConfig, seed: u64) -> Vec<LidarObservation> {
    let mut rng = stream(seed, LIDAR_STREAM);
    let n = (config.duration * config.rates.lidar).round() as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / config.rates.lidar;
            let truth = body.state_at(t).pose;
            let noise = Twist::new(
                gauss3(&mut rng, config.noise.lidar_rotation),
                gauss3(&mut rng, config.noise.lidar_translation),
            );
            LidarObservation {
                t,
                pose: truth.compose(&exp_se3(&noise, 1.0)),
                masked: config.mask_at(t),
            }
        })
        .collect()
}

/// Full simulation of a scenario: gait plan, sensors and LiDAR.
pub fn simulate(config: &ScenarioConfig) -> Result<Vec<SimFrame>> {
    config.validate()?;
    let plan = super::gait::generate_gait(config)?;
    synthesize_sensors(&plan, config, config.seed)
}
