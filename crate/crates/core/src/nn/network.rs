//! Neural leg kinematics model.
//!
//! ```text
//! window ─ common(102→64→20) ─ α ─┬─ static(20→16) ─ β_s ─┬─ contact(16→4, sigmoid) ─ c
//!                                 │                       │
//!                                 └─ adaptive(20→8) ─ β_a ┴─ twist(24→6, linear) ─ ξ
//! ```
//!
//! The adaptive layer's weights and biases form the online parameter vector;
//! every other layer belongs to the offline parameter set. Samples are columns
//! in the batched entry points.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector4, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::window::{InputWindow, INPUT_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub common_hidden: usize,
    pub feature_dim: usize,
    pub static_dim: usize,
    pub adaptive_dim: usize,
    pub contact_dim: usize,
    pub twist_dim: usize,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: INPUT_DIM,
            common_hidden: 64,
            feature_dim: 20,
            static_dim: 16,
            adaptive_dim: 8,
            contact_dim: 4,
            twist_dim: 6,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn new(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offline layer order inside [`OfflineParams`].
const COMMON_1: usize = 0;
const COMMON_2: usize = 1;
const STATIC: usize = 2;
const CONTACT: usize = 3;
const TWIST: usize = 4;

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim != INPUT_DIM || self.twist_dim != 6 || self.contact_dim != 4 {
            return Err(Error::ShapeMismatch(format!(
                "network I/O must be {INPUT_DIM} inputs, 6 twist and 4 contact outputs"
            )));
        }
        if [self.common_hidden, self.feature_dim, self.static_dim, self.adaptive_dim].contains(&0) {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Offline layers in storage order.
    pub fn offline_layers(&self) -> Vec<LayerShape> {
        vec![
            LayerShape::new("common_1", self.input_dim, self.common_hidden),
            LayerShape::new("common_2", self.common_hidden, self.feature_dim),
            LayerShape::new("static", self.feature_dim, self.static_dim),
            LayerShape::new("contact", self.static_dim, self.contact_dim),
            LayerShape::new("twist", self.static_dim + self.adaptive_dim, self.twist_dim),
        ]
    }

    pub fn adaptive_layer(&self) -> LayerShape {
        LayerShape::new("adaptive", self.feature_dim, self.adaptive_dim)
    }

    pub fn offline_len(&self) -> usize {
        self.offline_layers().iter().map(LayerShape::len).sum()
    }

    pub fn online_len(&self) -> usize {
        self.adaptive_layer().len()
    }
}

/// Affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(shape: &LayerShape) -> Self {
        Self {
            weight: DMatrix::zeros(shape.outputs, shape.inputs),
            bias: DVector::zeros(shape.outputs),
        }
    }

    /// Uniform in `±sqrt(1 / fan_in)` for weights and biases.
    pub fn random(shape: &LayerShape, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / shape.inputs as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(shape.outputs, shape.inputs, |_, _| rng.gen_range(-bound..bound)),
            bias: DVector::from_fn(shape.outputs, |_, _| rng.gen_range(-bound..bound)),
        }
    }

    /// Column-major weights followed by the bias.
    fn from_slice(shape: &LayerShape, flat: &[f64]) -> Self {
        let nw = shape.outputs * shape.inputs;
        Self {
            weight: DMatrix::from_column_slice(shape.outputs, shape.inputs, &flat[..nw]),
            bias: DVector::from_column_slice(&flat[nw..nw + shape.outputs]),
        }
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        out.extend_from_slice(self.bias.as_slice());
    }

    /// `activation(W x + b)` for every column of `x`.
    fn forward(&self, x: &DMatrix<f64>, activation: Option<Activation>) -> DMatrix<f64> {
        let mut z = &self.weight * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        if let Some(act) = activation {
            z.apply(|v| *v = act.apply(*v));
        }
        z
    }
}

/// Weights and biases of the layers trained offline.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineParams {
    pub layers: Vec<Dense>,
}

impl OfflineParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch.offline_layers().iter().map(Dense::zeros).collect(),
        }
    }

    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Self {
        Self {
            layers: arch.offline_layers().iter().map(|s| Dense::random(s, rng)).collect(),
        }
    }

    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.offline_len() {
            return Err(Error::ShapeMismatch(format!(
                "offline parameter vector has {} entries, expected {}",
                flat.len(),
                arch.offline_len()
            )));
        }
        let mut offset = 0;
        let layers = arch
            .offline_layers()
            .iter()
            .map(|s| {
                let d = Dense::from_slice(s, &flat[offset..]);
                offset += s.len();
                d
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.write_flat(&mut out);
        }
        out
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        let shapes = arch.offline_layers();
        let ok = self.layers.len() == shapes.len()
            && self
                .layers
                .iter()
                .zip(&shapes)
                .all(|(l, s)| l.weight.shape() == (s.outputs, s.inputs) && l.bias.len() == s.outputs);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("offline parameters do not match the architecture".into()))
        }
    }
}

/// Flat adaptive-layer parameters: column-major weights, then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OnlineParams(pub DVector<f64>);

impl OnlineParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self(DVector::zeros(arch.online_len()))
    }

    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let mut flat = Vec::new();
        Dense::random(&arch.adaptive_layer(), rng).write_flat(&mut flat);
        Self(DVector::from_vec(flat))
    }

    pub fn from_slice(arch: &Architecture, values: &[f64]) -> Result<Self> {
        if values.len() != arch.online_len() {
            return Err(Error::ShapeMismatch(format!(
                "online parameter vector has {} entries, expected {}",
                values.len(),
                arch.online_len()
            )));
        }
        Ok(Self(DVector::from_column_slice(values)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    fn layer(&self, arch: &Architecture) -> Dense {
        Dense::from_slice(&arch.adaptive_layer(), self.0.as_slice())
    }
}

/// Network outputs for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistPrediction {
    /// `[angular; translational]` body twist.
    pub twist: Vector6<f64>,
    pub contacts: Vector4<f64>,
}

/// Intermediate activations of a batched forward pass (one column per sample).
#[derive(Debug, Clone)]
pub struct BatchActivations {
    pub input: DMatrix<f64>,
    pub hidden: DMatrix<f64>,
    pub features: DMatrix<f64>,
    pub static_features: DMatrix<f64>,
    pub adaptive_features: DMatrix<f64>,
    pub contacts: DMatrix<f64>,
    pub twist: DMatrix<f64>,
}

/// Loss gradients with respect to network outputs.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub twist: DMatrix<f64>,
    pub contacts: Option<DMatrix<f64>>,
    /// Direct gradient on the adaptive features (used by regularization).
    pub adaptive_features: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScope {
    /// Only the online parameters.
    Online,
    /// Online and offline parameters.
    Parameters,
    /// Parameters and the input window.
    ParametersAndInput,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub online: DVector<f64>,
    pub offline: Option<OfflineParams>,
    pub input: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegNetwork {
    pub arch: Architecture,
    pub offline: OfflineParams,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |r, _| m.row(r).sum())
}

impl LegNetwork {
    pub fn new(arch: Architecture, offline: OfflineParams) -> Result<Self> {
        arch.validate()?;
        offline.check(&arch)?;
        Ok(Self { arch, offline })
    }

    pub fn random(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let offline = OfflineParams::random(&arch, rng);
        Self::new(arch, offline)
    }

    fn check_online(&self, online: &OnlineParams) -> Result<()> {
        if online.len() != self.arch.online_len() {
            return Err(Error::ShapeMismatch(format!(
                "online parameter vector has {} entries, expected {}",
                online.len(),
                self.arch.online_len()
            )));
        }
        Ok(())
    }

    pub fn forward_batch(&self, input: &DMatrix<f64>, online: &OnlineParams) -> Result<BatchActivations> {
        self.check_online(online)?;
        if input.nrows() != self.arch.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} rows, expected {}",
                input.nrows(),
                self.arch.input_dim
            )));
        }
        let act = Some(self.arch.activation);
        let l = &self.offline.layers;
        let hidden = l[COMMON_1].forward(input, act);
        let features = l[COMMON_2].forward(&hidden, act);
        let static_features = l[STATIC].forward(&features, act);
        let adaptive_features = online.layer(&self.arch).forward(&features, act);
        let mut contacts = l[CONTACT].forward(&static_features, None);
        contacts.apply(|v| *v = sigmoid(*v));
        let mut combined = static_features.clone().resize_vertically(self.arch.static_dim + self.arch.adaptive_dim, 0.0);
        combined.rows_mut(self.arch.static_dim, self.arch.adaptive_dim).copy_from(&adaptive_features);
        let twist = l[TWIST].forward(&combined, None);
        Ok(BatchActivations {
            input: input.clone(),
            hidden,
            features,
            static_features,
            adaptive_features,
            contacts,
            twist,
        })
    }

    pub fn backward_batch(
        &self,
        acts: &BatchActivations,
        online: &OnlineParams,
        upstream: &Upstream,
        scope: GradientScope,
    ) -> Result<Gradients> {
        self.check_online(online)?;
        let batch = acts.input.ncols();
        if upstream.twist.shape() != (self.arch.twist_dim, batch) {
            return Err(Error::ShapeMismatch("twist upstream gradient shape".into()));
        }
        let act = self.arch.activation;
        let layers = &self.offline.layers;
        let ns = self.arch.static_dim;
        let na = self.arch.adaptive_dim;
        let w_twist = &layers[TWIST].weight;

        let mut d_adaptive = w_twist.columns(ns, na).tr_mul(&upstream.twist);
        if let Some(extra) = &upstream.adaptive_features {
            d_adaptive += extra;
        }
        d_adaptive.zip_apply(&acts.adaptive_features, |d, y| *d *= act.derivative_from_output(y));
        let adaptive = online.layer(&self.arch);
        let mut online_grad = Vec::with_capacity(online.len());
        online_grad.extend_from_slice((&d_adaptive * acts.features.transpose()).as_slice());
        online_grad.extend_from_slice(row_sums(&d_adaptive).as_slice());
        let online_grad = DVector::from_vec(online_grad);

        if scope == GradientScope::Online {
            return Ok(Gradients {
                online: online_grad,
                offline: None,
                input: None,
            });
        }

        let mut grads = OfflineParams::zeros(&self.arch);
        let mut combined = acts.static_features.clone().resize_vertically(ns + na, 0.0);
        combined.rows_mut(ns, na).copy_from(&acts.adaptive_features);
        grads.layers[TWIST].weight = &upstream.twist * combined.transpose();
        grads.layers[TWIST].bias = row_sums(&upstream.twist);

        let mut d_static = w_twist.columns(0, ns).tr_mul(&upstream.twist);
        if let Some(dc) = &upstream.contacts {
            let mut d_logit = dc.clone();
            d_logit.zip_apply(&acts.contacts, |d, c| *d *= c * (1.0 - c));
            grads.layers[CONTACT].weight = &d_logit * acts.static_features.transpose();
            grads.layers[CONTACT].bias = row_sums(&d_logit);
            d_static += layers[CONTACT].weight.tr_mul(&d_logit);
        }
        d_static.zip_apply(&acts.static_features, |d, y| *d *= act.derivative_from_output(y));
        grads.layers[STATIC].weight = &d_static * acts.features.transpose();
        grads.layers[STATIC].bias = row_sums(&d_static);

        let mut d_features = layers[STATIC].weight.tr_mul(&d_static) + adaptive.weight.tr_mul(&d_adaptive);
        d_features.zip_apply(&acts.features, |d, y| *d *= act.derivative_from_output(y));
        grads.layers[COMMON_2].weight = &d_features * acts.hidden.transpose();
        grads.layers[COMMON_2].bias = row_sums(&d_features);

        let mut d_hidden = layers[COMMON_2].weight.tr_mul(&d_features);
        d_hidden.zip_apply(&acts.hidden, |d, y| *d *= act.derivative_from_output(y));
        grads.layers[COMMON_1].weight = &d_hidden * acts.input.transpose();
        grads.layers[COMMON_1].bias = row_sums(&d_hidden);

        let input = (scope == GradientScope::ParametersAndInput).then(|| layers[COMMON_1].weight.tr_mul(&d_hidden));
        Ok(Gradients {
            online: online_grad,
            offline: Some(grads),
            input,
        })
    }

    fn column(window: &InputWindow) -> DMatrix<f64> {
        DMatrix::from_column_slice(INPUT_DIM, 1, window.as_slice())
    }

    pub fn forward(&self, window: &InputWindow, online: &OnlineParams) -> Result<TwistPrediction> {
        let acts = self.forward_batch(&Self::column(window), online)?;
        Ok(TwistPrediction {
            twist: Vector6::from_column_slice(acts.twist.as_slice()),
            contacts: Vector4::from_column_slice(acts.contacts.as_slice()),
        })
    }

    /// Gradients of a scalar loss given `∂L/∂ξ` and `∂L/∂c` for one window.
    pub fn backward(
        &self,
        window: &InputWindow,
        online: &OnlineParams,
        d_twist: &Vector6<f64>,
        d_contacts: &Vector4<f64>,
        scope: GradientScope,
    ) -> Result<Gradients> {
        let acts = self.forward_batch(&Self::column(window), online)?;
        let upstream = Upstream {
            twist: DMatrix::from_column_slice(6, 1, d_twist.as_slice()),
            contacts: Some(DMatrix::from_column_slice(4, 1, d_contacts.as_slice())),
            adaptive_features: None,
        };
        self.backward_batch(&acts, online, &upstream, scope)
    }

    /// `∂ξ/∂m_on`; row `k` is the online gradient for upstream `e_k`.
    pub fn twist_jacobian(&self, window: &InputWindow, online: &OnlineParams) -> Result<(Vector6<f64>, Matrix6xX<f64>)> {
        let acts = self.forward_batch(&Self::column(window), online)?;
        let mut jac = Matrix6xX::zeros(online.len());
        for k in 0..6 {
            let upstream = Upstream {
                twist: DMatrix::from_fn(6, 1, |r, _| if r == k { 1.0 } else { 0.0 }),
                contacts: None,
                adaptive_features: None,
            };
            let g = self.backward_batch(&acts, online, &upstream, GradientScope::Online)?;
            jac.row_mut(k).copy_from(&g.online.transpose());
        }
        Ok((Vector6::from_column_slice(acts.twist.as_slice()), jac))
    }

    /// `∂ξ/∂m_off`, one row per twist component, in flat offline order.
    pub fn offline_twist_jacobian(&self, window: &InputWindow, online: &OnlineParams) -> Result<DMatrix<f64>> {
        let acts = self.forward_batch(&Self::column(window), online)?;
        let mut jac = DMatrix::zeros(6, self.arch.offline_len());
        for k in 0..6 {
            let upstream = Upstream {
                twist: DMatrix::from_fn(6, 1, |r, _| if r == k { 1.0 } else { 0.0 }),
                contacts: None,
                adaptive_features: None,
            };
            let g = self.backward_batch(&acts, online, &upstream, GradientScope::Parameters)?;
            let flat = g.offline.expect("parameter scope yields offline gradients").to_flat();
            for (c, v) in flat.into_iter().enumerate() {
                jac[(k, c)] = v;
            }
        }
        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (LegNetwork, OnlineParams, InputWindow) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::default();
        let net = LegNetwork::random(arch.clone(), &mut rng).unwrap();
        let online = OnlineParams::random(&arch, &mut rng);
        let window = InputWindow::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        (net, online, window)
    }

    #[test]
    fn published_dimensions() {
        let arch = Architecture::default();
        assert_eq!(arch.online_len(), 168);
        assert_eq!(arch.input_dim, 102);
        assert!(arch.offline_len() > arch.online_len());
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let (net, online, window) = setup(1);
        let a = net.forward(&window, &online).unwrap();
        let b = net.forward(&window, &online).unwrap();
        assert_eq!(a, b);
        assert!(a.contacts.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn zero_contact_logits_give_half() {
        let (mut net, online, window) = setup(2);
        net.offline.layers[CONTACT].weight.fill(0.0);
        net.offline.layers[CONTACT].bias.fill(0.0);
        let p = net.forward(&window, &online).unwrap();
        assert_eq!(p.contacts, Vector4::repeat(0.5));
    }

    #[test]
    fn zero_online_params_leave_only_static_path() {
        let (mut net, _, window) = setup(3);
        let online = OnlineParams::zeros(&net.arch);
        net.offline.layers[TWIST].bias.fill(0.0);
        let acts = net.forward_batch(&LegNetwork::column(&window), &online).unwrap();
        assert!(acts.adaptive_features.iter().all(|&v| v == 0.0));
        let expected = net.offline.layers[TWIST].weight.columns(0, 16) * &acts.static_features;
        assert!((acts.twist - expected).abs().max() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let (net, _, window) = setup(4);
        let short = OnlineParams(DVector::zeros(167));
        assert!(matches!(net.forward(&window, &short), Err(Error::ShapeMismatch(_))));
        assert!(OfflineParams::from_flat(&net.arch, &[0.0; 10]).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let (net, _, _) = setup(5);
        let flat = net.offline.to_flat();
        assert_eq!(flat.len(), net.arch.offline_len());
        assert_eq!(OfflineParams::from_flat(&net.arch, &flat).unwrap(), net.offline);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let (net, online, window) = setup(6);
        let g = net
            .backward(&window, &online, &Vector6::zeros(), &Vector4::zeros(), GradientScope::ParametersAndInput)
            .unwrap();
        assert!(g.online.iter().all(|&v| v == 0.0));
        assert!(g.offline.unwrap().to_flat().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contact_gradient_never_reaches_online_params() {
        let (net, online, window) = setup(7);
        let g = net
            .backward(&window, &online, &Vector6::zeros(), &Vector4::new(1.0, -2.0, 0.5, 3.0), GradientScope::Parameters)
            .unwrap();
        assert!(g.online.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contact_decoder_does_not_affect_twist() {
        let (mut net, online, window) = setup(8);
        let before = net.forward(&window, &online).unwrap().twist;
        net.offline.layers[CONTACT].weight.apply(|v| *v += 0.3);
        net.offline.layers[CONTACT].bias.apply(|v| *v -= 1.0);
        assert_eq!(net.forward(&window, &online).unwrap().twist, before);
    }

    #[test]
    fn twist_jacobian_is_stacked_backward() {
        let (net, online, window) = setup(9);
        let (twist, jac) = net.twist_jacobian(&window, &online).unwrap();
        assert_eq!(twist, net.forward(&window, &online).unwrap().twist);
        for k in 0..6 {
            let g = net
                .backward(&window, &online, &Vector6::ith(k, 1.0), &Vector4::zeros(), GradientScope::Online)
                .unwrap();
            assert_eq!(jac.row(k).transpose(), g.online);
        }
    }

    #[test]
    fn zero_window_jacobian_reduces_to_bias_path() {
        let (mut net, online, _) = setup(10);
        net.offline.layers[COMMON_1].bias.fill(0.0);
        net.offline.layers[COMMON_2].bias.fill(0.0);
        let (_, jac) = net.twist_jacobian(&InputWindow::zeros(), &online).unwrap();
        // With zero features only the adaptive biases act: ∂ξ_k/∂b_j = W_twist[k, 16 + j] (1 − tanh²(b_j)).
        let bias = &online.0.as_slice()[160..];
        for k in 0..6 {
            for j in 0..160 {
                assert_eq!(jac[(k, j)], 0.0);
            }
            for (j, b) in bias.iter().enumerate() {
                let expected = net.offline.layers[TWIST].weight[(k, 16 + j)] * (1.0 - b.tanh().powi(2));
                assert!((jac[(k, 160 + j)] - expected).abs() < 1e-15);
            }
        }
    }

    fn linear_loss(net: &LegNetwork, online: &OnlineParams, window: &InputWindow, a: &Vector6<f64>, c: &Vector4<f64>) -> f64 {
        let p = net.forward(window, online).unwrap();
        a.dot(&p.twist) + c.dot(&p.contacts)
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!((analytic - numeric).abs() / scale < 1e-4, "{what}: {analytic} vs {numeric}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (net, online, window) = setup(11);
        let a = Vector6::new(0.7, -1.1, 0.4, 1.3, -0.2, 0.9);
        let c = Vector4::new(0.5, -0.8, 1.2, -0.3);
        let g = net.backward(&window, &online, &a, &c, GradientScope::ParametersAndInput).unwrap();
        let h = 1e-6;
        for j in 0..online.len() {
            let mut plus = online.clone();
            let mut minus = online.clone();
            plus.0[j] += h;
            minus.0[j] -= h;
            let fd = (linear_loss(&net, &plus, &window, &a, &c) - linear_loss(&net, &minus, &window, &a, &c)) / (2.0 * h);
            assert_close(g.online[j], fd, &format!("online {j}"));
        }
        let flat = net.offline.to_flat();
        let grad_off = g.offline.unwrap().to_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let j = rng.gen_range(0..flat.len());
            let perturbed = |d: f64| {
                let mut f = flat.clone();
                f[j] += d;
                let n = LegNetwork::new(net.arch.clone(), OfflineParams::from_flat(&net.arch, &f).unwrap()).unwrap();
                linear_loss(&n, &online, &window, &a, &c)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            assert_close(grad_off[j], fd, &format!("offline {j}"));
        }
        let gi = g.input.unwrap();
        for j in (0..INPUT_DIM).step_by(7) {
            let mut plus = window;
            let mut minus = window;
            plus[j] += h;
            minus[j] -= h;
            let fd = (linear_loss(&net, &online, &plus, &a, &c) - linear_loss(&net, &online, &minus, &a, &c)) / (2.0 * h);
            assert_close(gi[j], fd, &format!("input {j}"));
        }
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let arch = Architecture {
            activation: Activation::Relu,
            ..Architecture::default()
        };
        let net = LegNetwork::random(arch.clone(), &mut rng).unwrap();
        let online = OnlineParams::random(&arch, &mut rng);
        let window = InputWindow::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let a = Vector6::new(1.0, 0.0, -0.5, 0.3, 0.8, -1.2);
        let (_, jac) = net.twist_jacobian(&window, &online).unwrap();
        let g = jac.transpose() * a;
        let h = 1e-7;
        for j in 0..online.len() {
            let mut plus = online.clone();
            let mut minus = online.clone();
            plus.0[j] += h;
            minus.0[j] -= h;
            let z = Vector4::zeros();
            let fd = (linear_loss(&net, &plus, &window, &a, &z) - linear_loss(&net, &minus, &window, &a, &z)) / (2.0 * h);
            assert_close(g[j], fd, &format!("online {j}"));
        }
    }

    #[test]
    fn batch_matches_single_samples() {
        let (net, online, _) = setup(13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = DMatrix::from_fn(INPUT_DIM, 5, |_, _| rng.gen_range(-1.0..1.0));
        let acts = net.forward_batch(&batch, &online).unwrap();
        let up = Upstream {
            twist: DMatrix::from_fn(6, 5, |r, c| (r + c) as f64 * 0.1 - 0.3),
            contacts: Some(DMatrix::from_fn(4, 5, |r, c| r as f64 * 0.2 - c as f64 * 0.1)),
            adaptive_features: None,
        };
        let g = net.backward_batch(&acts, &online, &up, GradientScope::Parameters).unwrap();
        let mut online_sum = DVector::zeros(online.len());
        let mut offline_sum = vec![0.0; net.arch.offline_len()];
        for col in 0..5 {
            let w = InputWindow::from_column_slice(batch.column(col).as_slice());
            let p = net.forward(&w, &online).unwrap();
            assert!((p.twist - acts.twist.column(col)).norm() < 1e-14);
            let d_t = Vector6::from_column_slice(up.twist.column(col).as_slice());
            let d_c = Vector4::from_column_slice(up.contacts.as_ref().unwrap().column(col).as_slice());
            let gs = net.backward(&w, &online, &d_t, &d_c, GradientScope::Parameters).unwrap();
            online_sum += gs.online;
            for (acc, v) in offline_sum.iter_mut().zip(gs.offline.unwrap().to_flat()) {
                *acc += v;
            }
        }
        assert!((online_sum - g.online).norm() < 1e-12);
        let batch_off = g.offline.unwrap().to_flat();
        assert!(offline_sum.iter().zip(&batch_off).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
