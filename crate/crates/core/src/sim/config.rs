//! Scenario description consumed by the simulator and the CLI.
//!
//! Scenarios are TOML (or JSON) documents with a `version` key. Every table is
//! optional and falls back to the defaults below.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::LegModel;

pub const CONFIG_VERSION: u32 = 1;
pub const GRAVITY: f64 = 9.81;

/// Tangent-space axis of a pose observation, rotation first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Rx,
    Ry,
    Rz,
    Tx,
    Ty,
    Tz,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Rx, Axis::Ry, Axis::Rz, Axis::Tx, Axis::Ty, Axis::Tz];

    /// Index in a `[rotation; translation]` tangent vector.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Set of masked (unobserved) axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct AxisMask([bool; 6]);

impl AxisMask {
    pub fn none() -> Self {
        Self([false; 6])
    }

    pub fn all() -> Self {
        Self([true; 6])
    }

    pub fn from_axes(axes: &[Axis]) -> Self {
        let mut m = [false; 6];
        for a in axes {
            m[a.index()] = true;
        }
        Self(m)
    }

    pub fn is_masked(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&m| m)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&m| !m)
    }

    /// `true` for every observed axis.
    pub fn observed(&self) -> [bool; 6] {
        self.0.map(|m| !m)
    }

    pub fn union(&self, other: &AxisMask) -> AxisMask {
        let mut m = self.0;
        for (a, b) in m.iter_mut().zip(other.0) {
            *a |= b;
        }
        AxisMask(m)
    }
}

impl From<Vec<Axis>> for AxisMask {
    fn from(v: Vec<Axis>) -> Self {
        Self::from_axes(&v)
    }
}

impl From<AxisMask> for Vec<Axis> {
    fn from(m: AxisMask) -> Self {
        Axis::ALL.iter().copied().filter(|a| m.0[a.index()]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainKind {
    Rigid,
    Deformable,
    SlipperyPatch,
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerrainKind::Rigid => "rigid",
            TerrainKind::Deformable => "deformable",
            TerrainKind::SlipperyPatch => "slippery-patch",
        })
    }
}

/// Ground interaction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainProfile {
    pub kind: TerrainKind,
    /// Mean stance-foot slide speed as a fraction of body speed.
    pub slip_gain: f64,
    /// Maximum foot penetration at nominal load (m).
    pub sinkage: f64,
    /// Multiplier on the nominal vertical reaction force.
    pub force_scale: f64,
    /// Tangential force per unit normal force and unit slide speed (s/m).
    #[serde(default = "default_slip_friction")]
    pub slip_friction: f64,
}

fn default_slip_friction() -> f64 {
    2.0
}

impl TerrainProfile {
    pub fn rigid() -> Self {
        Self {
            kind: TerrainKind::Rigid,
            slip_gain: 0.0,
            sinkage: 0.0,
            force_scale: 1.0,
            slip_friction: 2.0,
        }
    }

    pub fn deformable() -> Self {
        Self {
            kind: TerrainKind::Deformable,
            slip_gain: 0.04,
            sinkage: 0.02,
            force_scale: 0.9,
            slip_friction: 2.0,
        }
    }

    pub fn slippery() -> Self {
        Self {
            kind: TerrainKind::SlipperyPatch,
            slip_gain: 0.15,
            sinkage: 0.0,
            force_scale: 1.0,
            slip_friction: 3.0,
        }
    }

    /// Slippery ground with friction and sinkage not present in the training set.
    pub fn unseen_patch() -> Self {
        Self {
            kind: TerrainKind::SlipperyPatch,
            slip_gain: 0.2,
            sinkage: 0.005,
            force_scale: 1.1,
            slip_friction: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.slip_gain) {
            return Err(Error::Config(format!("slip gain {} outside [0, 0.5]", self.slip_gain)));
        }
        if !(0.0..=0.05).contains(&self.sinkage) {
            return Err(Error::Config(format!("sinkage {} outside [0, 0.05] m", self.sinkage)));
        }
        if !(self.force_scale > 0.0) || !(self.slip_friction >= 0.0) {
            return Err(Error::Config("force scale must be positive and friction non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSegment {
    pub start: f64,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub profile: TerrainProfile,
}

impl TerrainSegment {
    pub fn new(start: f64, profile: TerrainProfile) -> Self {
        Self { start, label: None, profile }
    }

    pub fn labelled(start: f64, label: &str, profile: TerrainProfile) -> Self {
        Self {
            start,
            label: Some(label.to_string()),
            profile,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.profile.kind.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadStep {
    pub time: f64,
    /// Added mass carried from `time` on (kg).
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyInterval {
    pub start: f64,
    pub end: f64,
    pub axes: AxisMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub accel: f64,
    pub gyro: f64,
    /// Bias random-walk densities (unit/√s).
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    /// Standard deviation of the initial biases.
    pub accel_bias_init: f64,
    pub gyro_bias_init: f64,
    pub encoder: f64,
    pub joint_velocity: f64,
    pub torque: f64,
    pub foot_force: f64,
    pub lidar_translation: f64,
    pub lidar_rotation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            accel: 0.02,
            gyro: 0.002,
            accel_bias_walk: 1e-4,
            gyro_bias_walk: 1e-4,
            accel_bias_init: 0.02,
            gyro_bias_init: 0.002,
            encoder: 1e-3,
            joint_velocity: 0.01,
            torque: 0.1,
            foot_force: 2.0,
            lidar_translation: 0.01,
            lidar_rotation: 0.002,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            accel: 0.0,
            gyro: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_init: 0.0,
            gyro_bias_init: 0.0,
            encoder: 0.0,
            joint_velocity: 0.0,
            torque: 0.0,
            foot_force: 0.0,
            lidar_translation: 0.0,
            lidar_rotation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitConfig {
    pub period: f64,
    pub duty_factor: f64,
    pub body_height: f64,
    pub swing_height: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            period: 0.5,
            duty_factor: 0.65,
            body_height: 0.30,
            swing_height: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub start: f64,
    /// Forward speed (m/s).
    pub speed: f64,
    /// Yaw rate (rad/s).
    pub yaw_rate: f64,
}

/// Random speed/turn command generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomMotion {
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    pub min_hold: f64,
    pub max_hold: f64,
    /// Probability that a segment stands still.
    pub stand_probability: f64,
}

impl Default for RandomMotion {
    fn default() -> Self {
        Self {
            min_speed: 0.3,
            max_speed: 1.2,
            max_yaw_rate: 0.4,
            min_hold: 3.0,
            max_hold: 8.0,
            stand_probability: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub initial_speed: f64,
    pub initial_yaw_rate: f64,
    /// Blend time between consecutive commands (s).
    pub ramp: f64,
    pub segments: Vec<MotionSegment>,
    /// When set, segments are drawn from this generator instead.
    pub random: Option<RandomMotion>,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            initial_speed: 0.0,
            initial_yaw_rate: 0.0,
            ramp: 1.0,
            segments: Vec::new(),
            random: Some(RandomMotion::default()),
        }
    }
}

impl MotionConfig {
    pub fn constant(speed: f64, yaw_rate: f64) -> Self {
        Self {
            initial_speed: speed,
            initial_yaw_rate: yaw_rate,
            ramp: 1.0,
            segments: Vec::new(),
            random: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub imu: f64,
    pub joints: f64,
    pub lidar: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            imu: 60.0,
            joints: 500.0,
            lidar: 10.0,
        }
    }
}

/// Complete scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    /// Robot mass without payload (kg).
    pub base_mass: f64,
    pub robot: LegModel,
    pub gait: GaitConfig,
    pub motion: MotionConfig,
    pub rates: Rates,
    pub noise: NoiseConfig,
    pub terrain: Vec<TerrainSegment>,
    pub payload: Vec<PayloadStep>,
    pub degeneracy: Vec<DegeneracyInterval>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            name: "default".into(),
            seed: 0,
            duration: 60.0,
            base_mass: 15.0,
            robot: LegModel::go2(),
            gait: GaitConfig::default(),
            motion: MotionConfig::default(),
            rates: Rates::default(),
            noise: NoiseConfig::default(),
            terrain: vec![TerrainSegment::new(0.0, TerrainProfile::rigid())],
            payload: Vec::new(),
            degeneracy: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// Feature-rich rigid ground without payload.
    pub fn nominal(seed: u64) -> Self {
        Self {
            name: "nominal".into(),
            seed,
            ..Self::default()
        }
    }

    /// Rigid ground with 3 kg, an unseen slippery patch from 40 s, payload
    /// removed at 60 s and LiDAR fully degenerate between 70 s and 90 s.
    pub fn challenge(seed: u64) -> Self {
        Self {
            name: "challenge".into(),
            seed,
            duration: 120.0,
            terrain: vec![
                TerrainSegment::new(0.0, TerrainProfile::rigid()),
                TerrainSegment::labelled(40.0, "patch", TerrainProfile::unseen_patch()),
            ],
            payload: vec![PayloadStep { time: 0.0, mass: 3.0 }, PayloadStep { time: 60.0, mass: 0.0 }],
            degeneracy: vec![DegeneracyInterval {
                start: 70.0,
                end: 90.0,
                axes: AxisMask::all(),
            }],
            ..Self::default()
        }
    }

    /// Offline training sequences: every terrain type with and without 3 kg.
    pub fn training_set(seed: u64, duration: f64) -> Vec<Self> {
        let terrains = [
            ("rigid", TerrainProfile::rigid()),
            ("deformable", TerrainProfile::deformable()),
            ("slippery", TerrainProfile::slippery()),
        ];
        let mut out = Vec::new();
        for (ti, (label, profile)) in terrains.into_iter().enumerate() {
            for (pi, mass) in [0.0, 3.0].into_iter().enumerate() {
                let index = (ti * 2 + pi) as u64;
                out.push(Self {
                    name: format!("{label}-{}kg", mass as u32),
                    seed: seed.wrapping_mul(1000).wrapping_add(index),
                    duration,
                    terrain: vec![TerrainSegment::labelled(0.0, label, profile.clone())],
                    payload: vec![PayloadStep { time: 0.0, mass }],
                    ..Self::default()
                });
            }
        }
        out
    }

    /// Slip-free steady walk with reduced sensor noise.
    pub fn walk(seed: u64) -> Self {
        let mut noise = NoiseConfig::default();
        noise.encoder = 1e-4;
        noise.joint_velocity = 1e-3;
        Self {
            name: "walk".into(),
            seed,
            duration: 30.0,
            noise,
            ..Self::default()
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "nominal" => Ok(Self::nominal(seed)),
            "challenge" => Ok(Self::challenge(seed)),
            "walk" => Ok(Self::walk(seed)),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `.json` files as JSON and everything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::config::load_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if !(self.duration > 0.0) || !(self.base_mass > 0.0) {
            return Err(Error::Config("duration and base mass must be positive".into()));
        }
        self.robot.validate()?;
        let r = &self.rates;
        let joints_per_key = r.joints / r.lidar;
        let imu_per_key = r.imu / r.lidar;
        if joints_per_key.fract() != 0.0 || imu_per_key.fract() != 0.0 || r.imu > r.joints {
            return Err(Error::Config("joint and IMU rates must be integer multiples of the LiDAR rate".into()));
        }
        let g = &self.gait;
        if !(g.period > 0.0 && g.duty_factor > 0.5 && g.duty_factor < 1.0 && g.body_height > 0.0) {
            return Err(Error::Config("gait needs positive period, duty factor in (0.5, 1)".into()));
        }
        if self.terrain.is_empty() || self.terrain[0].start > 0.0 {
            return Err(Error::Config("terrain must start at t = 0".into()));
        }
        for w in self.terrain.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::Config("terrain segment starts must increase".into()));
            }
        }
        for t in &self.terrain {
            t.profile.validate()?;
        }
        for w in self.payload.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::Config("payload times must be strictly increasing".into()));
            }
        }
        if self.payload.iter().any(|p| !(0.0..=5.0).contains(&p.mass)) {
            return Err(Error::Config("payload masses must lie in [0, 5] kg".into()));
        }
        let mut intervals: Vec<_> = self.degeneracy.iter().collect();
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        for d in &intervals {
            if !(d.end > d.start) {
                return Err(Error::Config("degeneracy interval must have end > start".into()));
            }
        }
        for w in intervals.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::Config("degeneracy intervals overlap".into()));
            }
        }
        Ok(())
    }

    pub fn terrain_at(&self, t: f64) -> &TerrainSegment {
        self.terrain
            .iter()
            .rev()
            .find(|s| s.start <= t)
            .unwrap_or(&self.terrain[0])
    }

    pub fn payload_at(&self, t: f64) -> f64 {
        self.payload
            .iter()
            .rev()
            .find(|p| p.time <= t)
            .map_or(0.0, |p| p.mass)
    }

    pub fn total_mass_at(&self, t: f64) -> f64 {
        self.base_mass + self.payload_at(t)
    }

    pub fn mask_at(&self, t: f64) -> AxisMask {
        self.degeneracy
            .iter()
            .filter(|d| d.start <= t && t < d.end)
            .fold(AxisMask::none(), |m, d| m.union(&d.axes))
    }

    pub fn joints_per_keyframe(&self) -> usize {
        (self.rates.joints / self.rates.lidar).round() as usize
    }

    pub fn imu_per_keyframe(&self) -> usize {
        (self.rates.imu / self.rates.lidar).round() as usize
    }
}
