//! Fixed-lag Levenberg–Marquardt smoother over `[T, v, b, m_on]` states.
//!
//! Each active node carries a 15-dim navigation increment
//! `[δφ, δρ, δv, δba, δbg]` and, for adaptive methods, the online network
//! parameters. Navigation blocks form a block-tridiagonal system; the online
//! parameters form a scalar tridiagonal chain shared by every parameter. Leg
//! factors couple the two through a low-rank term solved by Woodbury's
//! identity. Nodes older than the lag are dropped and held fixed as the anchor.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6xX, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::covariance::{update_leg_covariance, LegCovariance, LegResidualWindow};
use crate::graph::factors::{leg_residual, PoseObservation};
use crate::graph::imu::{preintegrate, ImuNoise, Matrix9, NavState, PreintegratedImu};
use crate::graph::keyframe::Keyframe;
use crate::graph::linalg::{Block, BlockTridiagonalCholesky};
use crate::graph::methods::{LegInput, TwistSource};
use crate::lie::Pose;
use crate::nn::network::OnlineParams;
use crate::sim::NoiseConfig;

const NAV: usize = 15;
/// Costs below this are at the floating-point floor of an exact solution.
const ABSOLUTE_COST_TOLERANCE: f64 = 1e-14;

/// Standard deviations of the prior on the first state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub rotation: f64,
    pub translation: f64,
    pub velocity: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            rotation: 0.05,
            translation: 0.1,
            velocity: 0.5,
            accel_bias: 0.1,
            gyro_bias: 0.01,
        }
    }
}

pub const SMOOTHER_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    pub version: u32,
    /// Time span of active states (s).
    pub lag: f64,
    /// Online-parameter random walk per keyframe.
    pub sigma_walk: f64,
    pub sigma_fix: f64,
    /// Divisor of `sigma_fix` on keyframes whose LiDAR axes are all masked.
    pub fix_tightening: f64,
    pub fixation: bool,
    pub residual_window: usize,
    /// Leg covariance diagonal before any residual is reliable.
    pub initial_leg_covariance: [f64; 6],
    pub lidar_rotation: f64,
    pub lidar_translation: f64,
    pub imu: ImuNoise,
    pub prior: PriorConfig,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self::from_noise(&NoiseConfig::default())
    }
}

impl SmootherConfig {
    /// Noise models matching a simulator configuration, floored so that
    /// noise-free streams still give a well-posed problem.
    pub fn from_noise(noise: &NoiseConfig) -> Self {
        Self {
            version: SMOOTHER_CONFIG_VERSION,
            lag: 6.0,
            sigma_walk: 0.003,
            sigma_fix: 10.0,
            fix_tightening: 10.0,
            fixation: true,
            residual_window: 15,
            initial_leg_covariance: [1e-5, 1e-5, 1e-5, 1e-4, 1e-4, 1e-4],
            lidar_rotation: noise.lidar_rotation.max(1e-4),
            lidar_translation: noise.lidar_translation.max(1e-3),
            imu: ImuNoise {
                accel: noise.accel.max(1e-3),
                gyro: noise.gyro.max(1e-4),
                accel_bias_walk: noise.accel_bias_walk.max(1e-5),
                gyro_bias_walk: noise.gyro_bias_walk.max(1e-5),
            },
            prior: PriorConfig::default(),
            max_iterations: 20,
            relative_tolerance: 1e-3,
            initial_lambda: 1e-4,
            max_lambda: 1e8,
        }
    }

    /// Loads `.json` files as JSON and everything else as TOML.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: Self = crate::config::load_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SMOOTHER_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported smoother config version {}", self.version)));
        }
        let positive = [
            self.lag,
            self.sigma_walk,
            self.sigma_fix,
            self.fix_tightening,
            self.lidar_rotation,
            self.lidar_translation,
            self.imu.accel,
            self.imu.gyro,
            self.imu.accel_bias_walk,
            self.imu.gyro_bias_walk,
            self.prior.rotation,
            self.prior.translation,
            self.prior.velocity,
            self.prior.accel_bias,
            self.prior.gyro_bias,
            self.initial_lambda,
            self.max_lambda,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("smoother noise, lag and damping values must be positive".into()));
        }
        if self.residual_window < 2 || self.max_iterations == 0 {
            return Err(Error::Config("residual window needs ≥ 2 entries and at least one iteration".into()));
        }
        Ok(())
    }
}

/// Per-factor-type totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorCosts {
    pub prior: f64,
    pub pose: f64,
    pub imu: f64,
    pub bias: f64,
    pub leg: f64,
    pub transition: f64,
    pub fixation: f64,
}

impl FactorCosts {
    pub fn total(&self) -> f64 {
        self.prior + self.pose + self.imu + self.bias + self.leg + self.transition + self.fixation
    }

    pub fn max_entry(&self) -> f64 {
        [self.prior, self.pose, self.imu, self.bias, self.leg, self.transition, self.fixation]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Estimate of the newest state after one smoother step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEstimate {
    pub t: f64,
    pub index: usize,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    /// `[accel; gyro]`.
    pub bias: Vector6<f64>,
    /// Online parameters of the newest state, for network-backed methods.
    pub m_on: Option<Vec<f64>>,
    /// Unwhitened leg residual of the newest leg factor at the optimum.
    pub leg_residual: Option<Vector6<f64>>,
    pub leg_covariance: Vector6<f64>,
    /// Half squared whitened residual norms over the active window.
    pub costs: FactorCosts,
    /// Largest absolute whitened residual entry per factor type.
    pub max_whitened: FactorCosts,
    pub iterations: usize,
    pub active_states: usize,
}

struct ImuTerm {
    pim: PreintegratedImu,
    /// `L⁻¹` with `L Lᵀ` the preintegration covariance.
    sqrt_info: Matrix9,
    /// `1 / (σ_walk √Δt)` per bias entry.
    walk_scale: Vector6<f64>,
}

struct LegTerm {
    input: LegInput,
    dt: f64,
    whitening: Vector6<f64>,
}

struct Node {
    index: usize,
    t: f64,
    state: NavState,
    online: Option<OnlineParams>,
    imu: Option<ImuTerm>,
    leg: Option<LegTerm>,
    observation: PoseObservation,
    fully_masked: bool,
}

#[derive(Clone)]
struct Anchor {
    state: NavState,
    online: Option<OnlineParams>,
}

/// Whitened leg factor coupling navigation and online parameters.
struct LegLinearization {
    node: usize,
    prev: Option<usize>,
    jp: Matrix6<f64>,
    jc: Matrix6<f64>,
    jm: Matrix6xX<f64>,
}

struct Linearization {
    costs: FactorCosts,
    max_whitened: FactorCosts,
    diag: Vec<Block>,
    lower: Vec<Block>,
    gx: DVector<f64>,
    /// Diagonal of the leg terms not stored in `diag` (adaptive only).
    leg_diag: DVector<f64>,
    m_diag: Vec<f64>,
    m_lower: Vec<f64>,
    /// Online-parameter gradient, one column per node.
    gm: DMatrix<f64>,
    legs: Vec<LegLinearization>,
}

impl Linearization {
    fn new(n: usize, online_len: usize) -> Self {
        Self {
            costs: FactorCosts::default(),
            max_whitened: FactorCosts::default(),
            diag: vec![Block::zeros(); n],
            lower: vec![Block::zeros(); n],
            gx: DVector::zeros(NAV * n),
            leg_diag: DVector::zeros(NAV * n),
            m_diag: vec![0.0; n],
            m_lower: vec![0.0; n],
            gm: DMatrix::zeros(online_len, n),
            legs: Vec::new(),
        }
    }

    fn cost(&self) -> f64 {
        self.costs.total()
    }

    fn add_unary<const R: usize>(&mut self, k: usize, j: &SMatrix<f64, R, NAV>, r: &SVector<f64, R>) {
        self.diag[k] += j.transpose() * j;
        let g = j.transpose() * r;
        let mut seg = self.gx.fixed_rows_mut::<NAV>(NAV * k);
        seg += g;
    }

    fn add_pair<const R: usize>(
        &mut self,
        prev: Option<usize>,
        k: usize,
        jp: &SMatrix<f64, R, NAV>,
        jc: &SMatrix<f64, R, NAV>,
        r: &SVector<f64, R>,
    ) {
        self.add_unary(k, jc, r);
        if let Some(p) = prev {
            debug_assert_eq!(p + 1, k);
            self.add_unary(p, jp, r);
            self.lower[k] += jc.transpose() * jp;
        }
    }
}

fn record(total: &mut f64, max: &mut f64, r: impl Iterator<Item = f64>) {
    for v in r {
        *total += 0.5 * v * v;
        *max = max.max(v.abs());
    }
}

fn pose_block(j: &Matrix6<f64>) -> SMatrix<f64, 6, NAV> {
    let mut out = SMatrix::<f64, 6, NAV>::zeros();
    out.fixed_view_mut::<6, 6>(0, 0).copy_from(j);
    out
}

struct Step {
    dx: DVector<f64>,
    dm: Option<DMatrix<f64>>,
    predicted: f64,
}

pub struct Smoother {
    config: SmootherConfig,
    source: Box<dyn TwistSource>,
    nodes: VecDeque<Node>,
    anchor: Option<Anchor>,
    fix_anchor: Option<OnlineParams>,
    prior_pose: Option<Pose>,
    residuals: LegResidualWindow,
    covariance: LegCovariance,
    online_len: usize,
}

impl Smoother {
    pub fn new(config: SmootherConfig, source: Box<dyn TwistSource>) -> Result<Self> {
        config.validate()?;
        let initial = source.initial_online();
        if source.adapts() && initial.is_none() {
            return Err(Error::Config(format!("adaptive method `{}` has no initial parameters", source.name())));
        }
        let online_len = if source.adapts() { initial.as_ref().map_or(0, |m| m.len()) } else { 0 };
        Ok(Self {
            residuals: LegResidualWindow::new(config.residual_window),
            covariance: LegCovariance::new(Vector6::from(config.initial_leg_covariance)),
            fix_anchor: if source.adapts() { initial } else { None },
            config,
            source,
            nodes: VecDeque::new(),
            anchor: None,
            prior_pose: None,
            online_len,
        })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn source(&self) -> &dyn TwistSource {
        self.source.as_ref()
    }

    pub fn leg_covariance(&self) -> &LegCovariance {
        &self.covariance
    }

    /// `(keyframe index, t, state)` of every active node, oldest first.
    pub fn active_states(&self) -> Vec<(usize, f64, NavState)> {
        self.nodes.iter().map(|n| (n.index, n.t, n.state)).collect()
    }

    fn adaptive(&self) -> bool {
        self.online_len > 0
    }

    fn lidar_sigma(&self) -> Vector6<f64> {
        let (r, t) = (self.config.lidar_rotation, self.config.lidar_translation);
        Vector6::new(r, r, r, t, t, t)
    }

    /// Adds keyframe `kf`, optimizes the window and drops states beyond the lag.
    pub fn step(&mut self, kf: &Keyframe<'_>) -> Result<KeyframeEstimate> {
        let prev_bias = self.nodes.back().map_or_else(Vector6::zeros, |n| n.state.bias);
        let measured = self.source.measure(kf, &prev_bias)?;
        let observation = PoseObservation {
            pose: kf.lidar.pose,
            masked: kf.lidar.masked,
            sigma: self.lidar_sigma(),
        };
        let fully_masked = kf.lidar.masked.is_full();
        let node = match self.nodes.back() {
            None if self.anchor.is_none() => {
                self.prior_pose = Some(kf.lidar.pose);
                Node {
                    index: kf.index,
                    t: kf.t,
                    state: NavState {
                        pose: kf.lidar.pose,
                        velocity: Vector3::zeros(),
                        bias: Vector6::zeros(),
                    },
                    online: self.fix_anchor.clone(),
                    imu: None,
                    leg: None,
                    observation,
                    fully_masked,
                }
            }
            _ => {
                let (prev_state, prev_online, prev_t) = match self.nodes.back() {
                    Some(p) => (p.state, p.online.clone(), p.t),
                    None => unreachable!("nodes are only dropped while newer ones remain"),
                };
                let dt = kf.t - prev_t;
                if !(dt > 0.0) {
                    return Err(Error::Config(format!("keyframe at {} s does not advance time", kf.t)));
                }
                let pim = preintegrate(&kf.imu, &prev_state.bias, &self.config.imu)?;
                let chol = pim
                    .covariance
                    .cholesky()
                    .ok_or_else(|| Error::SolverFailure("preintegration covariance is not positive definite".into()))?;
                let sqrt_info = chol
                    .l()
                    .try_inverse()
                    .ok_or_else(|| Error::SolverFailure("preintegration covariance is singular".into()))?;
                let sa = 1.0 / (self.config.imu.accel_bias_walk * pim.dt.sqrt());
                let sg = 1.0 / (self.config.imu.gyro_bias_walk * pim.dt.sqrt());
                let state = pim.predict(&prev_state);
                let leg = measured.map(|input| LegTerm {
                    input,
                    dt,
                    whitening: self.covariance.whitening(),
                });
                Node {
                    index: kf.index,
                    t: kf.t,
                    state,
                    online: prev_online,
                    imu: Some(ImuTerm {
                        pim,
                        sqrt_info,
                        walk_scale: Vector6::new(sa, sa, sa, sg, sg, sg),
                    }),
                    leg,
                    observation,
                    fully_masked,
                }
            }
        };
        self.nodes.push_back(node);

        let (lin, iterations) = self.optimize()?;
        let leg_residual = self.update_covariance()?;
        let newest = self.nodes.back().expect("just pushed");
        let estimate = KeyframeEstimate {
            t: newest.t,
            index: newest.index,
            pose: newest.state.pose,
            velocity: newest.state.velocity,
            bias: newest.state.bias,
            m_on: newest
                .online
                .clone()
                .or_else(|| self.source.initial_online())
                .map(|m| m.as_slice().to_vec()),
            leg_residual,
            leg_covariance: self.covariance.diagonal,
            costs: lin.costs,
            max_whitened: lin.max_whitened,
            iterations,
            active_states: self.nodes.len(),
        };
        self.marginalize();
        Ok(estimate)
    }

    fn marginalize(&mut self) {
        let newest_t = self.nodes.back().map_or(0.0, |n| n.t);
        while self.nodes.len() > 1 && newest_t - self.nodes[0].t > self.config.lag + 1e-9 {
            let dropped = self.nodes.pop_front().expect("len > 1");
            if dropped.online.is_some() {
                self.fix_anchor = dropped.online.clone();
            }
            self.anchor = Some(Anchor {
                state: dropped.state,
                online: dropped.online,
            });
        }
    }

    /// Pushes the newest leg residual into the window and refreshes the covariance.
    fn update_covariance(&mut self) -> Result<Option<Vector6<f64>>> {
        let n = self.nodes.len();
        let newest = &self.nodes[n - 1];
        let Some(leg) = &newest.leg else { return Ok(None) };
        let (prev_pose, prev_online) = if n >= 2 {
            (self.nodes[n - 2].state.pose, self.nodes[n - 2].online.as_ref())
        } else {
            let a = self.anchor.as_ref().expect("leg factors have a predecessor");
            (a.state.pose, a.online.as_ref())
        };
        // Prediction with the parameters before this keyframe was fitted.
        let twist = match &leg.input {
            LegInput::Twist(xi) => *xi,
            LegInput::Window(w) => {
                let m = prev_online
                    .or(newest.online.as_ref())
                    .expect("adaptive nodes carry parameters");
                self.source.twist_jacobian(w, m)?.0
            }
        };
        let r = leg_residual(&prev_pose, &newest.state.pose, &twist, leg.dt)?.residual;
        self.residuals.push(r, newest.observation.masked.observed());
        self.covariance = update_leg_covariance(&self.residuals, &self.covariance);
        Ok(Some(r))
    }

    fn optimize(&mut self) -> Result<(Linearization, usize)> {
        let cfg = self.config.clone();
        let mut lin = self.linearize(&self.nodes)?;
        if !lin.cost().is_finite() {
            return Err(Error::SolverFailure("non-finite cost".into()));
        }
        let mut lambda = cfg.initial_lambda;
        let mut iterations = 0;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let step = self.solve(&lin, lambda)?;
            let cost = lin.cost();
            if cost < ABSOLUTE_COST_TOLERANCE || step.predicted <= 1e-12 * cost || step.predicted <= 1e-300 {
                break;
            }
            let trial_nodes = self.apply(&step);
            let trial = self.linearize(&trial_nodes).ok().filter(|t| t.cost().is_finite());
            match trial {
                Some(t) if t.cost() < cost => {
                    let relative = (cost - t.cost()) / cost;
                    self.nodes = trial_nodes;
                    lin = t;
                    lambda = (lambda / 3.0).max(1e-12);
                    if relative < cfg.relative_tolerance || lin.cost() < ABSOLUTE_COST_TOLERANCE {
                        break;
                    }
                }
                _ => {
                    lambda *= 5.0;
                    if lambda > cfg.max_lambda {
                        if step.predicted > cfg.relative_tolerance * cost {
                            return Err(Error::SolverFailure(format!(
                                "damping exceeded {} with cost {cost:.6e}",
                                cfg.max_lambda
                            )));
                        }
                        break;
                    }
                }
            }
        }
        Ok((lin, iterations))
    }

    fn apply(&self, step: &Step) -> VecDeque<Node> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let d = step.dx.fixed_rows::<NAV>(NAV * k);
                let state = NavState {
                    pose: n.state.pose.retract(&d.fixed_rows::<6>(0).into_owned()),
                    velocity: n.state.velocity + d.fixed_rows::<3>(6),
                    bias: n.state.bias + d.fixed_rows::<6>(9),
                };
                let online = match (&n.online, &step.dm) {
                    (Some(m), Some(dm)) if self.adaptive() => Some(OnlineParams(&m.0 + dm.column(k))),
                    (m, _) => m.clone(),
                };
                Node {
                    index: n.index,
                    t: n.t,
                    state,
                    online,
                    imu: n.imu.as_ref().map(|i| ImuTerm {
                        pim: i.pim.clone(),
                        sqrt_info: i.sqrt_info,
                        walk_scale: i.walk_scale,
                    }),
                    leg: n.leg.as_ref().map(|l| LegTerm {
                        input: l.input.clone(),
                        dt: l.dt,
                        whitening: l.whitening,
                    }),
                    observation: n.observation.clone(),
                    fully_masked: n.fully_masked,
                }
            })
            .collect()
    }

    fn linearize(&self, nodes: &VecDeque<Node>) -> Result<Linearization> {
        let n = nodes.len();
        let adaptive = self.adaptive();
        let mut lin = Linearization::new(n, self.online_len);
        let mut costs = FactorCosts::default();
        let mut maxes = FactorCosts::default();
        for k in 0..n {
            let node = &nodes[k];
            let prev_active = k.checked_sub(1);
            let prev_state = match prev_active {
                Some(p) => Some(&nodes[p].state),
                None => self.anchor.as_ref().map(|a| &a.state),
            };
            let prev_online = match prev_active {
                Some(p) => nodes[p].online.as_ref(),
                None => self.anchor.as_ref().and_then(|a| a.online.as_ref()),
            };

            if node.index == 0 && self.anchor.is_none() {
                let p = &self.config.prior;
                let prior_pose = self.prior_pose.unwrap_or_default();
                let r_pose = prior_pose.local(&node.state.pose)?;
                let jr = crate::lie::right_jacobian_se3_inv(&r_pose);
                let sig = Vector6::new(p.rotation, p.rotation, p.rotation, p.translation, p.translation, p.translation);
                let mut r = SVector::<f64, NAV>::zeros();
                let mut j = SMatrix::<f64, NAV, NAV>::zeros();
                for a in 0..6 {
                    r[a] = r_pose[a] / sig[a];
                    for b in 0..6 {
                        j[(a, b)] = jr[(a, b)] / sig[a];
                    }
                }
                for a in 0..3 {
                    r[6 + a] = node.state.velocity[a] / p.velocity;
                    j[(6 + a, 6 + a)] = 1.0 / p.velocity;
                    r[9 + a] = node.state.bias[a] / p.accel_bias;
                    j[(9 + a, 9 + a)] = 1.0 / p.accel_bias;
                    r[12 + a] = node.state.bias[3 + a] / p.gyro_bias;
                    j[(12 + a, 12 + a)] = 1.0 / p.gyro_bias;
                }
                record(&mut costs.prior, &mut maxes.prior, r.iter().copied());
                lin.add_unary(k, &j, &r);
            }

            let (r_obs, j_obs) = node.observation.whitened(&node.state.pose)?;
            record(&mut costs.pose, &mut maxes.pose, r_obs.iter().copied());
            lin.add_unary(k, &pose_block(&j_obs), &r_obs);

            if let (Some(imu), Some(ps)) = (&node.imu, prev_state) {
                let l = imu.pim.linearize(ps, &node.state)?;
                let r = imu.sqrt_info * l.residual;
                record(&mut costs.imu, &mut maxes.imu, r.iter().copied());
                lin.add_pair(prev_active, k, &(imu.sqrt_info * l.d_i), &(imu.sqrt_info * l.d_j), &r);

                let db = node.state.bias - ps.bias;
                let r = db.component_mul(&imu.walk_scale);
                let mut jc = SMatrix::<f64, 6, NAV>::zeros();
                for a in 0..6 {
                    jc[(a, 9 + a)] = imu.walk_scale[a];
                }
                record(&mut costs.bias, &mut maxes.bias, r.iter().copied());
                lin.add_pair(prev_active, k, &(-jc), &jc, &r);
            }

            if let (Some(leg), Some(ps)) = (&node.leg, prev_state) {
                let (twist, d_xi) = match &leg.input {
                    LegInput::Twist(xi) => (*xi, None),
                    LegInput::Window(w) => {
                        let m = node
                            .online
                            .as_ref()
                            .ok_or_else(|| Error::Config("window leg input without online parameters".into()))?;
                        let (xi, j) = self.source.twist_jacobian(w, m)?;
                        (xi, Some(j))
                    }
                };
                let res = leg_residual(&ps.pose, &node.state.pose, &twist, leg.dt)?;
                let w = Matrix6::from_diagonal(&leg.whitening);
                let r = w * res.residual;
                let jp = w * res.d_prev;
                let jc = w * res.d_cur;
                record(&mut costs.leg, &mut maxes.leg, r.iter().copied());
                match d_xi {
                    Some(dxi) if adaptive => {
                        let jm = w * res.d_twist * dxi;
                        let mut g = lin.gx.fixed_rows_mut::<6>(NAV * k);
                        g += jc.transpose() * r;
                        for a in 0..6 {
                            lin.leg_diag[NAV * k + a] += jc.column(a).norm_squared();
                        }
                        if let Some(p) = prev_active {
                            let mut g = lin.gx.fixed_rows_mut::<6>(NAV * p);
                            g += jp.transpose() * r;
                            for a in 0..6 {
                                lin.leg_diag[NAV * p + a] += jp.column(a).norm_squared();
                            }
                        }
                        let mut gm = lin.gm.column_mut(k);
                        gm += jm.transpose() * r;
                        lin.legs.push(LegLinearization {
                            node: k,
                            prev: prev_active,
                            jp,
                            jc,
                            jm,
                        });
                    }
                    _ => lin.add_pair(prev_active, k, &pose_block(&jp), &pose_block(&jc), &r),
                }
            }

            if adaptive {
                let m = node
                    .online
                    .as_ref()
                    .ok_or_else(|| Error::Config("adaptive node without online parameters".into()))?;
                if let Some(pm) = prev_online {
                    let s = self.config.sigma_walk;
                    let r = (&m.0 - &pm.0) / s;
                    record(&mut costs.transition, &mut maxes.transition, r.iter().copied());
                    let w = 1.0 / (s * s);
                    lin.m_diag[k] += w;
                    let mut gm = lin.gm.column_mut(k);
                    gm.axpy(1.0 / s, &r, 1.0);
                    if let Some(p) = prev_active {
                        lin.m_diag[p] += w;
                        lin.m_lower[k] -= w;
                        let mut gp = lin.gm.column_mut(p);
                        gp.axpy(-1.0 / s, &r, 1.0);
                    }
                }
                if self.config.fixation {
                    if let Some(anchor) = &self.fix_anchor {
                        let mut s = self.config.sigma_fix;
                        if node.fully_masked {
                            s /= self.config.fix_tightening;
                        }
                        let r = (&m.0 - &anchor.0) / s;
                        record(&mut costs.fixation, &mut maxes.fixation, r.iter().copied());
                        lin.m_diag[k] += 1.0 / (s * s);
                        let mut gm = lin.gm.column_mut(k);
                        gm.axpy(1.0 / s, &r, 1.0);
                    }
                }
            }
        }
        lin.costs = costs;
        lin.max_whitened = maxes;
        Ok(lin)
    }

    fn solve(&self, lin: &Linearization, lambda: f64) -> Result<Step> {
        let n = lin.diag.len();
        let nx = NAV * n;
        let floor = 1e-9;
        let dx_diag = DVector::from_fn(nx, |i, _| (lin.diag[i / NAV][(i % NAV, i % NAV)] + lin.leg_diag[i]).max(floor));
        let mut damped = lin.diag.clone();
        for (k, b) in damped.iter_mut().enumerate() {
            for a in 0..NAV {
                b[(a, a)] += lambda * dx_diag[NAV * k + a];
            }
        }
        let chol = BlockTridiagonalCholesky::factor(&damped, &lin.lower)?;
        let mut y_x = DMatrix::from_column_slice(nx, 1, lin.gx.as_slice());
        chol.solve_in_place(&mut y_x);
        let y_x = y_x.column(0).into_owned();

        if !self.adaptive() {
            let dx = -y_x;
            let predicted = 0.5 * (-lin.gx.dot(&dx) + lambda * dx.component_mul(&dx).dot(&dx_diag));
            return Ok(Step { dx, dm: None, predicted });
        }

        let p = self.online_len;
        let f_count = lin.legs.len();
        let mut leg_m_diag = vec![0.0; n];
        for l in &lin.legs {
            leg_m_diag[l.node] += l.jm.norm_squared() / p as f64;
        }
        let dm_diag: Vec<f64> = (0..n).map(|k| (lin.m_diag[k] + leg_m_diag[k]).max(floor)).collect();
        let mut m_mat = DMatrix::zeros(n, n);
        for k in 0..n {
            m_mat[(k, k)] = lin.m_diag[k] + lambda * dm_diag[k];
            if k > 0 {
                m_mat[(k, k - 1)] = lin.m_lower[k];
                m_mat[(k - 1, k)] = lin.m_lower[k];
            }
        }
        let m_inv = m_mat
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("online-parameter chain is not positive definite".into()))?
            .inverse();
        let y_m = &lin.gm * &m_inv;

        let (dx, dm) = if f_count == 0 {
            (-y_x, -y_m)
        } else {
            let cols = 6 * f_count;
            let mut w = DMatrix::zeros(nx, cols);
            for (f, l) in lin.legs.iter().enumerate() {
                w.view_mut((NAV * l.node, 6 * f), (6, 6)).copy_from(&l.jc.transpose());
                if let Some(pv) = l.prev {
                    w.view_mut((NAV * pv, 6 * f), (6, 6)).copy_from(&l.jp.transpose());
                }
            }
            chol.solve_in_place(&mut w);

            let mut jm_stack = DMatrix::zeros(cols, p);
            for (f, l) in lin.legs.iter().enumerate() {
                jm_stack.view_mut((6 * f, 0), (6, p)).copy_from(&l.jm);
            }
            let gram = &jm_stack * jm_stack.transpose();
            let mut c = DMatrix::identity(cols, cols);
            for (f, l) in lin.legs.iter().enumerate() {
                let mut rows = l.jc * w.view((NAV * l.node, 0), (6, cols));
                if let Some(pv) = l.prev {
                    rows += l.jp * w.view((NAV * pv, 0), (6, cols));
                }
                let mut target = c.view_mut((6 * f, 0), (6, cols));
                target += rows;
                for (h, lh) in lin.legs.iter().enumerate() {
                    let s = m_inv[(l.node, lh.node)];
                    let mut blk = c.view_mut((6 * f, 6 * h), (6, 6));
                    blk += gram.view((6 * f, 6 * h), (6, 6)) * s;
                }
            }
            let c = (&c + c.transpose()) * 0.5;

            let mut vty = DVector::zeros(cols);
            for (f, l) in lin.legs.iter().enumerate() {
                let mut v = l.jc * y_x.fixed_rows::<6>(NAV * l.node) + &l.jm * y_m.column(l.node);
                if let Some(pv) = l.prev {
                    v += l.jp * y_x.fixed_rows::<6>(NAV * pv);
                }
                vty.fixed_rows_mut::<6>(6 * f).copy_from(&v);
            }
            let z = c
                .cholesky()
                .ok_or_else(|| Error::SolverFailure("capacitance matrix is not positive definite".into()))?
                .solve(&vty);
            let corr_x = &w * &z;
            let mut u = DMatrix::zeros(p, f_count);
            let mut sel = DMatrix::zeros(f_count, n);
            for (f, l) in lin.legs.iter().enumerate() {
                u.set_column(f, &(l.jm.transpose() * z.fixed_rows::<6>(6 * f)));
                sel.set_row(f, &m_inv.row(l.node));
            }
            let corr_m = &u * &sel;
            (corr_x - y_x, corr_m - y_m)
        };

        let mut predicted = -lin.gx.dot(&dx) + lambda * dx.component_mul(&dx).dot(&dx_diag);
        for k in 0..n {
            let col = dm.column(k);
            predicted += -lin.gm.column(k).dot(&col) + lambda * dm_diag[k] * col.norm_squared();
        }
        Ok(Step {
            dx,
            dm: Some(dm),
            predicted: 0.5 * predicted,
        })
    }
}

/// Runs a smoother over every keyframe in order.
pub fn run_smoother<'a>(
    keyframes: &[Keyframe<'a>],
    config: SmootherConfig,
    source: Box<dyn TwistSource>,
) -> Result<(Vec<KeyframeEstimate>, Smoother)> {
    let mut smoother = Smoother::new(config, source)?;
    let mut out = Vec::with_capacity(keyframes.len());
    for kf in keyframes {
        out.push(smoother.step(kf)?);
    }
    Ok((out, smoother))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{compute_ate, Trajectory};
    use crate::graph::keyframe::keyframes;
    use crate::nn::window::InputWindow;
    use crate::sim::config::MotionConfig;
    use crate::sim::{simulate, ScenarioConfig, SimFrame};
    use crate::train::dataset::reference_twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Truth twist, optionally offset by a linear function of the online parameters.
    struct OracleSource {
        prev: Option<(f64, Pose)>,
        jac: Option<Matrix6xX<f64>>,
    }

    impl OracleSource {
        fn fixed() -> Self {
            Self { prev: None, jac: None }
        }

        fn linear(p: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Self {
                prev: None,
                jac: Some(Matrix6xX::from_fn(p, |_, _| rng.gen_range(-0.05..0.05))),
            }
        }
    }

    impl TwistSource for OracleSource {
        fn name(&self) -> &str {
            "oracle"
        }

        fn adapts(&self) -> bool {
            self.jac.is_some()
        }

        fn initial_online(&self) -> Option<OnlineParams> {
            self.jac.as_ref().map(|j| OnlineParams(DVector::zeros(j.ncols())))
        }

        fn measure(&mut self, kf: &Keyframe<'_>, _bias: &Vector6<f64>) -> Result<Option<LegInput>> {
            let cur = (kf.t, kf.frame().truth.pose);
            let prev = self.prev.replace(cur);
            let Some((t0, p0)) = prev else { return Ok(None) };
            let xi = reference_twist(&p0, &cur.1, cur.0 - t0)?;
            Ok(Some(match &self.jac {
                None => LegInput::Twist(xi),
                Some(_) => {
                    let mut w = InputWindow::zeros();
                    w.fixed_rows_mut::<6>(0).copy_from(&xi);
                    LegInput::Window(Box::new(w))
                }
            }))
        }

        fn twist_jacobian(&self, window: &InputWindow, online: &OnlineParams) -> Result<(Vector6<f64>, Matrix6xX<f64>)> {
            let j = self.jac.clone().expect("adaptive oracle");
            Ok((window.fixed_rows::<6>(0) + &j * &online.0, j))
        }
    }

    fn quiet_frames(duration: f64) -> (ScenarioConfig, Vec<SimFrame>) {
        let mut cfg = ScenarioConfig::nominal(11);
        cfg.duration = duration;
        cfg.noise = NoiseConfig::zero();
        cfg.motion = MotionConfig::constant(0.8, 0.15);
        let frames = simulate(&cfg).unwrap();
        (cfg, frames)
    }

    /// The start velocity is unknown, so its prior must not bias an exact solution.
    fn quiet_config(cfg: &ScenarioConfig) -> SmootherConfig {
        let mut c = SmootherConfig::from_noise(&cfg.noise);
        c.prior.velocity = 1e3;
        c
    }

    fn ate(frames: &[SimFrame], est: &[KeyframeEstimate]) -> f64 {
        let truth = Trajectory::from_pairs(frames.iter().filter(|f| f.lidar.is_some()).map(|f| (f.t, f.truth.pose))).unwrap();
        let e = Trajectory::from_pairs(est.iter().map(|e| (e.t, e.pose))).unwrap();
        compute_ate(&e, &truth).unwrap().stats.rmse
    }

    #[test]
    fn noise_free_run_is_exact() {
        let (cfg, frames) = quiet_frames(30.0);
        let kfs = keyframes(&frames);
        let (est, _) = run_smoother(&kfs, quiet_config(&cfg), Box::new(OracleSource::fixed())).unwrap();
        assert!(ate(&frames, &est) < 1e-3);
        for e in est.iter().filter(|e| e.t > 7.0) {
            // Bounded by the LM relative tolerance, not by drift.
            assert!(e.max_whitened.max_entry() < 1e-5, "t {} max {:?}", e.t, e.max_whitened);
            assert!(e.active_states <= 62, "active {}", e.active_states);
        }
    }

    #[test]
    fn noise_free_adaptive_run_keeps_parameters() {
        let (cfg, frames) = quiet_frames(10.0);
        let kfs = keyframes(&frames);
        let (est, _) = run_smoother(&kfs, quiet_config(&cfg), Box::new(OracleSource::linear(168, 3))).unwrap();
        assert!(ate(&frames, &est) < 1e-3);
        let last = est.last().unwrap();
        let drift: f64 = last.m_on.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(drift < 1e-6, "drift {drift}");
        assert!(last.max_whitened.max_entry() < 1e-6);
    }

    #[test]
    fn woodbury_step_solves_damped_normal_equations() {
        let mut cfg = ScenarioConfig::nominal(5);
        cfg.duration = 1.0;
        let frames = simulate(&cfg).unwrap();
        let kfs = keyframes(&frames);
        let p = 12;
        let mut sm = Smoother::new(SmootherConfig::from_noise(&cfg.noise), Box::new(OracleSource::linear(p, 9))).unwrap();
        for kf in &kfs[..6] {
            sm.step(kf).unwrap();
        }
        // Perturb the parameters so every term is active.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for node in sm.nodes.iter_mut() {
            node.online = Some(OnlineParams(DVector::from_fn(p, |_, _| rng.gen_range(-0.5..0.5))));
        }
        let lin = sm.linearize(&sm.nodes).unwrap();
        assert!(!lin.legs.is_empty());
        let n = lin.diag.len();
        let nx = NAV * n;
        let dim = nx + p * n;
        let mut h = DMatrix::zeros(dim, dim);
        for k in 0..n {
            h.view_mut((NAV * k, NAV * k), (NAV, NAV)).copy_from(&lin.diag[k]);
            if k > 0 {
                h.view_mut((NAV * k, NAV * (k - 1)), (NAV, NAV)).copy_from(&lin.lower[k]);
                h.view_mut((NAV * (k - 1), NAV * k), (NAV, NAV)).copy_from(&lin.lower[k].transpose());
            }
            for a in 0..p {
                h[(nx + p * k + a, nx + p * k + a)] += lin.m_diag[k];
                if k > 0 {
                    h[(nx + p * k + a, nx + p * (k - 1) + a)] += lin.m_lower[k];
                    h[(nx + p * (k - 1) + a, nx + p * k + a)] += lin.m_lower[k];
                }
            }
        }
        for l in &lin.legs {
            let mut j = DMatrix::zeros(6, dim);
            j.view_mut((0, NAV * l.node), (6, 6)).copy_from(&l.jc);
            if let Some(pv) = l.prev {
                j.view_mut((0, NAV * pv), (6, 6)).copy_from(&l.jp);
            }
            j.view_mut((0, nx + p * l.node), (6, p)).copy_from(&l.jm);
            h += j.transpose() * &j;
        }
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, nx).copy_from(&lin.gx);
        for k in 0..n {
            g.rows_mut(nx + p * k, p).copy_from(&lin.gm.column(k));
        }
        let lambda = 0.3;
        let step = sm.solve(&lin, lambda).unwrap();
        let mut delta = DVector::zeros(dim);
        delta.rows_mut(0, nx).copy_from(&step.dx);
        let dm = step.dm.unwrap();
        for k in 0..n {
            delta.rows_mut(nx + p * k, p).copy_from(&dm.column(k));
        }
        // Rebuild the damping used by the solver.
        let mut damp = DVector::zeros(dim);
        for i in 0..nx {
            damp[i] = (h[(i, i)]).max(1e-9);
        }
        for k in 0..n {
            let legs: f64 = lin.legs.iter().filter(|l| l.node == k).map(|l| l.jm.norm_squared()).sum::<f64>() / p as f64;
            for a in 0..p {
                damp[nx + p * k + a] = (lin.m_diag[k] + legs).max(1e-9);
            }
        }
        let lhs = (&h + DMatrix::from_diagonal(&(damp * lambda))) * &delta;
        let err = (lhs + &g).amax() / g.amax();
        assert!(err < 1e-8, "relative residual {err}");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let mut cfg = ScenarioConfig::nominal(8);
        cfg.duration = 4.0;
        let frames = simulate(&cfg).unwrap();
        let kfs = keyframes(&frames);
        let run = || {
            run_smoother(&kfs, SmootherConfig::from_noise(&cfg.noise), Box::new(OracleSource::linear(168, 2)))
                .unwrap()
                .0
        };
        let a = serde_json::to_string(&run()).unwrap();
        let b = serde_json::to_string(&run()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_advancing_keyframes() {
        let (cfg, frames) = quiet_frames(1.0);
        let kfs = keyframes(&frames);
        let mut sm = Smoother::new(SmootherConfig::from_noise(&cfg.noise), Box::new(OracleSource::fixed())).unwrap();
        sm.step(&kfs[0]).unwrap();
        sm.step(&kfs[1]).unwrap();
        assert!(sm.step(&kfs[1]).is_err());
    }
}
