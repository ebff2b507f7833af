//! Mini-batch offline training with shared offline and per-sequence online parameters.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::dataset::{SampleSet, SequenceData, TrainingSequence};
use super::loss::{sequence_loss, LossTerms, LossWeights};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_rte, RteResult, Trajectory, RTE_SEGMENT_LENGTH};
use crate::lie::{exp_se3, Twist};
use crate::nn::blob::{ModelBlob, SequenceParams};
use crate::nn::network::{Architecture, GradientScope, LegNetwork, OfflineParams, OnlineParams};
use crate::nn::window::Standardizer;

pub const TRAIN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    pub epochs: usize,
    /// Windows per gradient step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Trailing fraction of each sequence held out for validation.
    pub holdout: f64,
    /// Must match how the sequences were encoded.
    pub tactile: bool,
    pub architecture: Architecture,
    /// Sequence whose online parameters seed online estimation; the first when unset.
    pub nominal_sequence: Option<String>,
    /// Trailing epochs averaged into the reported final loss.
    pub smoothing_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: TRAIN_CONFIG_VERSION,
            epochs: 2500,
            batch_size: 50,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            holdout: 0.1,
            tactile: true,
            architecture: Architecture::default(),
            nominal_sequence: None,
            smoothing_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != TRAIN_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported training config version {}", self.version)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.smoothing_window == 0 {
            return Err(Error::Config("epochs, batch_size and smoothing_window must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("holdout must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        self.architecture.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `.json` files as JSON and everything else as TOML.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: Self = crate::config::load_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceValidation {
    pub name: String,
    pub terrain: String,
    pub payload: f64,
    pub samples: usize,
    pub twist_loss: f64,
    pub contact_accuracy: f64,
    /// `None` when the held-out tail covers less than one segment.
    pub rte: Option<RteResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<LossTerms>,
    pub initial_loss: f64,
    pub final_smoothed_loss: f64,
    /// Held-out contact accuracy over all sequences at a 0.5 threshold.
    pub contact_accuracy: f64,
    pub validation: Vec<SequenceValidation>,
}

impl TrainReport {
    pub fn loss_ratio(&self) -> f64 {
        self.final_smoothed_loss / self.initial_loss
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,total,twist,contact,regularization\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i + 1, e.total, e.twist, e.contact, e.regularization);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub blob: ModelBlob,
    pub report: TrainReport,
    pub network: LegNetwork,
    pub online: Vec<OnlineParams>,
    pub sequences: Vec<TrainingSequence>,
}

/// Trailing moving average of `values` with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Contact predictions matching the labels at a 0.5 threshold: `(correct, total)`.
fn contact_hits(network: &LegNetwork, online: &OnlineParams, set: &SampleSet) -> Result<(usize, usize)> {
    if set.is_empty() {
        return Ok((0, 0));
    }
    let batch = set.all();
    let acts = network.forward_batch(&batch.inputs, online)?;
    let correct = acts
        .contacts
        .iter()
        .zip(batch.contacts.iter())
        .filter(|(c, y)| (**c > 0.5) == (**y > 0.5))
        .count();
    Ok((correct, batch.contacts.len()))
}

/// Integrates network twists over a sample stream starting from the first
/// truth pose and compares against truth per 1 m segment.
pub fn evaluate_network_rte(network: &LegNetwork, online: &OnlineParams, set: &SampleSet) -> Result<RteResult> {
    let (est, truth) = network_trajectory(network, online, set)?;
    compute_rte(&est, &truth, RTE_SEGMENT_LENGTH)
}

/// Dead-reckoned network trajectory and the matching truth trajectory.
pub fn network_trajectory(network: &LegNetwork, online: &OnlineParams, set: &SampleSet) -> Result<(Trajectory, Trajectory)> {
    let first = set.samples.first().ok_or(Error::TooShort(0.0))?;
    let batch = set.all();
    let acts = network.forward_batch(&batch.inputs, online)?;
    let mut pose = first.truth;
    let mut est = vec![(first.t, pose)];
    for k in 1..set.len() {
        let dt = set.samples[k].t - set.samples[k - 1].t;
        let xi = Twist::from_vector(&acts.twist.fixed_view::<6, 1>(0, k).into_owned());
        pose = pose.compose(&exp_se3(&xi, dt));
        est.push((set.samples[k].t, pose));
    }
    let truth = Trajectory::from_pairs(set.samples.iter().map(|s| (s.t, s.truth)))?;
    Ok((Trajectory::from_pairs(est)?, truth))
}

pub fn train_offline(data: &[SequenceData], config: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    config.validate()?;
    let labels: BTreeSet<(String, u64)> = data.iter().map(|d| (d.terrain.clone(), d.payload.to_bits())).collect();
    if data.len() < 2 || labels.len() < 2 {
        return Err(Error::Config(
            "offline training needs at least two sequences with different terrain or payload".into(),
        ));
    }
    if let Some(d) = data.iter().find(|d| d.tactile != config.tactile) {
        return Err(Error::Config(format!(
            "sequence `{}` was encoded with tactile={} but the model expects tactile={}",
            d.name, d.tactile, config.tactile
        )));
    }
    let standardizer = Standardizer::fit(data.iter().flat_map(|d| d.training_frames(config.holdout)))?;
    let sequences = data
        .iter()
        .map(|d| TrainingSequence::build(d, &standardizer, config.holdout))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = sequences.iter().find(|s| s.train.is_empty()) {
        return Err(Error::InsufficientHistory {
            needed: 1,
            available: s.train.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = config.architecture.clone();
    let mut network = LegNetwork::random(arch.clone(), &mut rng)?;
    let initial_online = OnlineParams::random(&arch, &mut rng);
    let mut online: Vec<OnlineParams> = vec![initial_online; sequences.len()];
    let mut offline_flat = network.offline.to_flat();
    let mut adam_off = AdamState::new(config.adam, offline_flat.len());
    let mut adam_on: Vec<AdamState> = (0..sequences.len()).map(|_| AdamState::new(config.adam, arch.online_len())).collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let orders: Vec<Vec<usize>> = sequences
            .iter()
            .map(|s| {
                let mut idx: Vec<usize> = (0..s.train.len()).collect();
                idx.shuffle(&mut rng);
                idx
            })
            .collect();
        let rounds = orders.iter().map(|o| o.len().div_ceil(config.batch_size)).max().unwrap_or(0);
        let mut acc = LossTerms::default();
        let mut seen = 0usize;
        for round in 0..rounds {
            for (s, seq) in sequences.iter().enumerate() {
                let Some(chunk) = orders[s].chunks(config.batch_size).nth(round) else {
                    continue;
                };
                let batch = seq.train.batch(chunk);
                let (terms, grads) = sequence_loss(&network, &online[s], &batch, &config.weights, GradientScope::Parameters)?;
                if !terms.total.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1 });
                }
                let n = chunk.len() as f64;
                acc.total += terms.total * n;
                acc.twist += terms.twist * n;
                acc.contact += terms.contact * n;
                acc.regularization += terms.regularization * n;
                seen += chunk.len();

                let g_off = grads.offline.expect("parameter scope yields offline gradients").to_flat();
                adam_off.update(&mut offline_flat, &g_off);
                network.offline = OfflineParams::from_flat(&arch, &offline_flat)?;
                adam_on[s].update(online[s].0.as_mut_slice(), grads.online.as_slice());
            }
        }
        let inv = 1.0 / seen as f64;
        let terms = LossTerms {
            total: acc.total * inv,
            twist: acc.twist * inv,
            contact: acc.contact * inv,
            regularization: acc.regularization * inv,
        };
        if !terms.total.is_finite() || offline_flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        epochs.push(terms);
    }

    let mut validation = Vec::new();
    let (mut correct, mut total) = (0, 0);
    for (seq, on) in sequences.iter().zip(&online) {
        let (c, t) = contact_hits(&network, on, &seq.validation)?;
        correct += c;
        total += t;
        let twist_loss = if seq.validation.is_empty() {
            0.0
        } else {
            sequence_loss(&network, on, &seq.validation.all(), &config.weights, GradientScope::Online)?.0.twist
        };
        validation.push(SequenceValidation {
            name: seq.name.clone(),
            terrain: seq.terrain.clone(),
            payload: seq.payload,
            samples: seq.validation.len(),
            twist_loss,
            contact_accuracy: if t == 0 { 0.0 } else { c as f64 / t as f64 },
            rte: evaluate_network_rte(&network, on, &seq.validation).ok(),
        });
    }

    let totals: Vec<f64> = epochs.iter().map(|e| e.total).collect();
    let smoothed = moving_average(&totals, config.smoothing_window);
    let report = TrainReport {
        initial_loss: totals[0],
        final_smoothed_loss: *smoothed.last().expect("at least one epoch"),
        contact_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        epochs,
        validation,
    };

    let nominal = match &config.nominal_sequence {
        Some(name) => sequences
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| Error::Config(format!("nominal sequence `{name}` not in the data set")))?,
        None => 0,
    };
    let params: Vec<SequenceParams> = sequences
        .iter()
        .zip(&online)
        .map(|(s, on)| SequenceParams {
            name: s.name.clone(),
            terrain: s.terrain.clone(),
            payload: s.payload,
            online: on.as_slice().to_vec(),
        })
        .collect();
    let blob = ModelBlob::new(
        &network,
        standardizer,
        config.tactile,
        &online[nominal],
        &sequences[nominal].name,
        params,
    );
    Ok(TrainOutput {
        blob,
        report,
        network,
        online,
        sequences,
    })
}

/// Online-parameter gradient of the loss of `set` under `online`.
pub fn online_gradient(network: &LegNetwork, online: &OnlineParams, set: &SampleSet, weights: &LossWeights) -> Result<DVector<f64>> {
    Ok(sequence_loss(network, online, &set.all(), weights, GradientScope::Online)?.1.online)
}
