//! Versioned JSON model file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, LayerShape, LegNetwork, OfflineParams, OnlineParams};
use super::window::Standardizer;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "legodom-model";
pub const MODEL_VERSION: u32 = 1;

/// Online parameters fitted to one training sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub name: String,
    pub terrain: String,
    pub payload: f64,
    pub online: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlob {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    /// Offline layers in storage order; each is column-major weights then bias.
    pub layers: Vec<LayerShape>,
    pub online_layer: LayerShape,
    /// Whether torque and foot-force channels feed the network.
    pub tactile: bool,
    pub standardizer: Standardizer,
    pub offline: Vec<f64>,
    /// Starting point for online estimation.
    pub initial_online: Vec<f64>,
    pub initial_online_source: String,
    pub sequences: Vec<SequenceParams>,
}

impl ModelBlob {
    pub fn new(
        network: &LegNetwork,
        standardizer: Standardizer,
        tactile: bool,
        initial_online: &OnlineParams,
        initial_online_source: &str,
        sequences: Vec<SequenceParams>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            architecture: network.arch.clone(),
            layers: network.arch.offline_layers(),
            online_layer: network.arch.adaptive_layer(),
            tactile,
            standardizer,
            offline: network.offline.to_flat(),
            initial_online: initial_online.as_slice().to_vec(),
            initial_online_source: initial_online_source.into(),
            sequences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Config(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        self.architecture.validate()?;
        if self.layers != self.architecture.offline_layers() || self.online_layer != self.architecture.adaptive_layer() {
            return Err(Error::ShapeMismatch("layer table does not match the architecture".into()));
        }
        self.standardizer.validate()?;
        let n_on = self.architecture.online_len();
        if self.offline.len() != self.architecture.offline_len()
            || self.initial_online.len() != n_on
            || self.sequences.iter().any(|s| s.online.len() != n_on)
        {
            return Err(Error::ShapeMismatch("parameter vector lengths do not match the architecture".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<LegNetwork> {
        LegNetwork::new(
            self.architecture.clone(),
            OfflineParams::from_flat(&self.architecture, &self.offline)?,
        )
    }

    pub fn initial_online(&self) -> Result<OnlineParams> {
        OnlineParams::from_slice(&self.architecture, &self.initial_online)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let blob: Self = serde_json::from_str(text)?;
        blob.validate()?;
        Ok(blob)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob() -> ModelBlob {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = LegNetwork::random(Architecture::default(), &mut rng).unwrap();
        let online = OnlineParams::random(&net.arch, &mut rng);
        let seq = SequenceParams {
            name: "rigid-0kg".into(),
            terrain: "rigid".into(),
            payload: 0.0,
            online: online.as_slice().to_vec(),
        };
        ModelBlob::new(&net, Standardizer::identity(), true, &online, "rigid-0kg", vec![seq])
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let b = blob();
        let back = ModelBlob::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.network().unwrap().offline.to_flat(), b.offline);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let mut b = blob();
        b.version = 7;
        assert!(matches!(ModelBlob::from_json(&b.to_json().unwrap()), Err(Error::Config(_))));
        let mut b = blob();
        b.offline.pop();
        assert!(matches!(ModelBlob::from_json(&b.to_json().unwrap()), Err(Error::ShapeMismatch(_))));
    }
}
