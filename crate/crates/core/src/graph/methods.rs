//! Leg odometry strategies and the name-keyed registry that builds them.

use nalgebra::{Matrix6xX, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::graph::keyframe::Keyframe;
use crate::kinematics::{conventional_leg_velocity, LegModel, LEG_COUNT};
use crate::nn::blob::ModelBlob;
use crate::nn::network::{LegNetwork, OnlineParams};
use crate::nn::window::{build_window, FrameEncoder, InputWindow, SensorFrame34, Standardizer, CONTACT_FORCE_THRESHOLD, WINDOW_LEN};
use crate::sim::SimFrame;

/// What a leg factor needs to predict the body twist of one keyframe step.
#[derive(Debug, Clone, PartialEq)]
pub enum LegInput {
    /// Network input; the twist depends on the online parameters.
    Window(Box<InputWindow>),
    /// Twist fixed at measurement time.
    Twist(Vector6<f64>),
}

/// A source of per-keyframe body twists for the leg factor.
pub trait TwistSource {
    fn name(&self) -> &str;

    /// Whether the online parameters are smoother variables.
    fn adapts(&self) -> bool {
        false
    }

    /// Starting online parameters, for network-backed sources.
    fn initial_online(&self) -> Option<OnlineParams> {
        None
    }

    /// Consumes keyframe `kf`. `None` means no leg factor for this step.
    fn measure(&mut self, kf: &Keyframe<'_>, bias: &Vector6<f64>) -> Result<Option<LegInput>>;

    /// Twist and `∂ξ/∂m` for an adaptive source.
    fn twist_jacobian(&self, _window: &InputWindow, _online: &OnlineParams) -> Result<(Vector6<f64>, Matrix6xX<f64>)> {
        Err(Error::Config(format!("method `{}` has no online parameters", self.name())))
    }

    /// Number of torque/foot-force reads performed so far.
    fn tactile_reads(&self) -> usize {
        0
    }
}

/// Latest frame in `frames` carrying an IMU sample, else `fallback`.
fn latest_imu<'a>(frames: &'a [SimFrame], fallback: Option<&'a SimFrame>) -> Option<&'a SimFrame> {
    frames.iter().rev().find(|f| f.imu.is_some()).or(fallback)
}

/// Network-backed source shared by `ours`, `no-online` and `no-tactile`.
pub struct NeuralSource {
    name: String,
    network: LegNetwork,
    standardizer: Standardizer,
    online: OnlineParams,
    encoder: FrameEncoder,
    adapt: bool,
    history: Vec<SensorFrame34>,
    last_imu: Option<SimFrame>,
}

impl NeuralSource {
    pub fn new(name: &str, blob: &ModelBlob, adapt: bool) -> Result<Self> {
        blob.validate()?;
        Ok(Self {
            name: name.into(),
            network: blob.network()?,
            standardizer: blob.standardizer.clone(),
            online: blob.initial_online()?,
            encoder: FrameEncoder::new(blob.tactile),
            adapt,
            history: Vec::with_capacity(WINDOW_LEN + 1),
            last_imu: None,
        })
    }

    pub fn network(&self) -> &LegNetwork {
        &self.network
    }

    /// Encodes the keyframe tick and returns the window once three ticks are available.
    pub fn window(&mut self, kf: &Keyframe<'_>) -> Result<Option<InputWindow>> {
        let imu_frame = latest_imu(kf.frames, self.last_imu.as_ref()).unwrap_or(kf.frame()).clone();
        let encoded = self.encoder.encode(kf.frame(), &imu_frame);
        self.last_imu = Some(imu_frame);
        if self.history.len() == WINDOW_LEN {
            self.history.remove(0);
        }
        self.history.push(encoded);
        if self.history.len() < WINDOW_LEN {
            return Ok(None);
        }
        build_window(&self.history, &self.standardizer).map(Some)
    }
}

impl TwistSource for NeuralSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn adapts(&self) -> bool {
        self.adapt
    }

    fn initial_online(&self) -> Option<OnlineParams> {
        Some(self.online.clone())
    }

    fn measure(&mut self, kf: &Keyframe<'_>, _bias: &Vector6<f64>) -> Result<Option<LegInput>> {
        let Some(window) = self.window(kf)? else { return Ok(None) };
        if self.adapt {
            Ok(Some(LegInput::Window(Box::new(window))))
        } else {
            Ok(Some(LegInput::Twist(self.network.forward(&window, &self.online)?.twist)))
        }
    }

    fn twist_jacobian(&self, window: &InputWindow, online: &OnlineParams) -> Result<(Vector6<f64>, Matrix6xX<f64>)> {
        self.network.twist_jacobian(window, online)
    }

    fn tactile_reads(&self) -> usize {
        self.encoder.tactile_reads()
    }
}

/// Stance-leg kinematic velocity averaged over the joint ticks of a keyframe.
pub struct ConventionalSource {
    model: LegModel,
    gyro: Option<Vector3<f64>>,
}

impl ConventionalSource {
    pub fn new(model: LegModel) -> Self {
        Self { model, gyro: None }
    }
}

impl TwistSource for ConventionalSource {
    fn name(&self) -> &str {
        "conventional-leg"
    }

    fn measure(&mut self, kf: &Keyframe<'_>, bias: &Vector6<f64>) -> Result<Option<LegInput>> {
        let bg = bias.fixed_rows::<3>(3).into_owned();
        let mut omega_sum = Vector3::zeros();
        let mut v_sum = Vector3::zeros();
        let mut n = 0usize;
        for f in kf.frames {
            if let Some(imu) = &f.imu {
                self.gyro = Some(imu.gyro);
            }
            let Some(gyro) = self.gyro else { continue };
            let omega = gyro - bg;
            let contacts: [bool; LEG_COUNT] = f.foot_forces.map(|force| force > CONTACT_FORCE_THRESHOLD);
            match conventional_leg_velocity(&self.model, &f.joints, &omega, &contacts) {
                Ok(v) => {
                    omega_sum += omega;
                    v_sum += v;
                    n += 1;
                }
                Err(Error::NoContact) => {}
                Err(e) => return Err(e),
            }
        }
        if kf.index == 0 || n == 0 {
            return Ok(None);
        }
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&(omega_sum / n as f64));
        xi.fixed_rows_mut::<3>(3).copy_from(&(v_sum / n as f64));
        Ok(Some(LegInput::Twist(xi)))
    }
}

/// LiDAR-IMU only: never contributes a leg factor.
pub struct NoLegSource;

impl TwistSource for NoLegSource {
    fn name(&self) -> &str {
        "lio-only"
    }

    fn measure(&mut self, _kf: &Keyframe<'_>, _bias: &Vector6<f64>) -> Result<Option<LegInput>> {
        Ok(None)
    }
}

/// Inputs available to method builders.
#[derive(Debug, Clone)]
pub struct MethodResources {
    /// Model trained with tactile channels.
    pub model: Option<ModelBlob>,
    /// Model trained without tactile channels.
    pub no_tactile_model: Option<ModelBlob>,
    pub robot: LegModel,
}

impl Default for MethodResources {
    fn default() -> Self {
        Self {
            model: None,
            no_tactile_model: None,
            robot: LegModel::go2(),
        }
    }
}

pub type MethodBuilder = fn(&MethodResources) -> Result<Box<dyn TwistSource>>;

#[derive(Clone)]
pub struct MethodEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub build: MethodBuilder,
}

/// Ordered table of odometry methods.
#[derive(Clone)]
pub struct MethodRegistry {
    entries: Vec<MethodEntry>,
}

fn require<'a>(blob: &'a Option<ModelBlob>, what: &str) -> Result<&'a ModelBlob> {
    blob.as_ref().ok_or_else(|| Error::Config(format!("method needs a {what}")))
}

fn build_ours(r: &MethodResources) -> Result<Box<dyn TwistSource>> {
    let blob = require(&r.model, "tactile model")?;
    if !blob.tactile {
        return Err(Error::Config("`ours` needs a model trained with tactile inputs".into()));
    }
    Ok(Box::new(NeuralSource::new("ours", blob, true)?))
}

fn build_no_online(r: &MethodResources) -> Result<Box<dyn TwistSource>> {
    Ok(Box::new(NeuralSource::new("no-online", require(&r.model, "tactile model")?, false)?))
}

fn build_no_tactile(r: &MethodResources) -> Result<Box<dyn TwistSource>> {
    let blob = require(&r.no_tactile_model, "model trained without tactile inputs")?;
    if blob.tactile {
        return Err(Error::Config("`no-tactile` needs a model trained without tactile inputs".into()));
    }
    Ok(Box::new(NeuralSource::new("no-tactile", blob, true)?))
}

fn build_lio_only(_: &MethodResources) -> Result<Box<dyn TwistSource>> {
    Ok(Box::new(NoLegSource))
}

fn build_conventional(r: &MethodResources) -> Result<Box<dyn TwistSource>> {
    r.robot.validate()?;
    Ok(Box::new(ConventionalSource::new(r.robot.clone())))
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("ours", "neural leg odometry with online adaptation", build_ours);
        r.register("no-online", "neural leg odometry with frozen online parameters", build_no_online);
        r.register("no-tactile", "neural leg odometry without torque and foot-force inputs", build_no_tactile);
        r.register("lio-only", "LiDAR and IMU only", build_lio_only);
        r.register("conventional-leg", "kinematic stance-leg velocity factor", build_conventional);
        r
    }

    /// Adds or replaces a method.
    pub fn register(&mut self, name: &'static str, description: &'static str, build: MethodBuilder) {
        let entry = MethodEntry { name, description, build };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn entries(&self) -> &[MethodEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&MethodEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownMethod(name.into()))
    }

    pub fn build(&self, name: &str, resources: &MethodResources) -> Result<Box<dyn TwistSource>> {
        (self.get(name)?.build)(resources)
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::keyframe::keyframes;
    use crate::nn::network::Architecture;
    use crate::sim::{simulate, NoiseConfig, ScenarioConfig};
    use crate::sim::config::MotionConfig;
    use crate::train::dataset::reference_twist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob(tactile: bool) -> ModelBlob {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture::default();
        let net = LegNetwork::random(arch.clone(), &mut rng).unwrap();
        let m = OnlineParams::random(&arch, &mut rng);
        ModelBlob::new(&net, Standardizer::identity(), tactile, &m, "test", Vec::new())
    }

    #[test]
    fn registry_lookup() {
        let reg = MethodRegistry::standard();
        assert_eq!(reg.names(), ["ours", "no-online", "no-tactile", "lio-only", "conventional-leg"]);
        assert!(matches!(reg.build("bogus", &MethodResources::default()), Err(Error::UnknownMethod(_))));
        assert!(reg.build("ours", &MethodResources::default()).is_err());
        let res = MethodResources {
            model: Some(blob(true)),
            no_tactile_model: Some(blob(false)),
            ..Default::default()
        };
        for name in reg.names() {
            let source = reg.build(name, &res).unwrap();
            assert_eq!(source.name(), name);
            assert_eq!(source.adapts(), name == "ours" || name == "no-tactile");
        }
        let swapped = MethodResources {
            model: Some(blob(false)),
            no_tactile_model: Some(blob(true)),
            ..Default::default()
        };
        assert!(reg.build("ours", &swapped).is_err());
        assert!(reg.build("no-tactile", &swapped).is_err());
    }

    #[test]
    fn neural_windows_start_at_third_keyframe_and_skip_tactile() {
        let mut cfg = ScenarioConfig::nominal(2);
        cfg.duration = 1.0;
        let frames = simulate(&cfg).unwrap();
        let kfs = keyframes(&frames);
        let mut src = NeuralSource::new("no-tactile", &blob(false), true).unwrap();
        let inputs: Vec<_> = kfs.iter().map(|k| src.measure(k, &Vector6::zeros()).unwrap()).collect();
        assert!(inputs[0].is_none() && inputs[1].is_none());
        assert!(inputs[2..].iter().all(|i| matches!(i, Some(LegInput::Window(_)))));
        assert_eq!(src.tactile_reads(), 0);
        let mut frozen = NeuralSource::new("no-online", &blob(true), false).unwrap();
        let out: Vec<_> = kfs.iter().map(|k| frozen.measure(k, &Vector6::zeros()).unwrap()).collect();
        assert!(matches!(out[2], Some(LegInput::Twist(_))));
        assert_eq!(frozen.tactile_reads(), kfs.len());
    }

    #[test]
    fn conventional_twist_tracks_truth_without_noise() {
        let mut cfg = ScenarioConfig::nominal(4);
        cfg.duration = 6.0;
        cfg.noise = NoiseConfig::zero();
        cfg.motion = MotionConfig::constant(0.6, 0.2);
        let frames = simulate(&cfg).unwrap();
        let kfs = keyframes(&frames);
        let mut src = ConventionalSource::new(cfg.robot.clone());
        let mut err = 0.0;
        let mut n = 0;
        for (i, k) in kfs.iter().enumerate() {
            let input = src.measure(k, &Vector6::zeros()).unwrap();
            if i < 20 {
                continue;
            }
            let Some(LegInput::Twist(xi)) = input else { panic!("expected a twist") };
            let truth = reference_twist(&kfs[i - 1].frame().truth.pose, &k.frame().truth.pose, k.t - kfs[i - 1].t).unwrap();
            err += (xi - truth).fixed_rows::<3>(3).norm_squared();
            n += 1;
        }
        let rms = (err / n as f64).sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }
}
