//! Composite twist / contact / feature-regularization loss.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::{GradientScope, Gradients, LegNetwork, OnlineParams, Upstream};

use super::dataset::Batch;

/// Contact scores are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` inside the log.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Contact cross-entropy.
    pub contact: f64,
    /// Squared norm of the adaptive features.
    pub regularization: f64,
    /// Rotational twist error relative to translational.
    pub rotation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contact: 5.0,
            regularization: 1e-3,
            rotation: 200.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.contact, self.regularization, self.rotation]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `mean(‖Δv‖² + w_rot ‖Δω‖²)`.
    pub twist: f64,
    /// Mean over samples of the summed per-foot cross-entropy.
    pub contact: f64,
    /// `mean ‖β_a‖²`.
    pub regularization: f64,
}

fn bce(c: f64, y: f64) -> (f64, f64) {
    let cc = c.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
    let value = -(y * cc.ln() + (1.0 - y) * (1.0 - cc).ln());
    let grad = if c > BCE_CLIP && c < 1.0 - BCE_CLIP {
        -y / cc + (1.0 - y) / (1.0 - cc)
    } else {
        0.0
    };
    (value, grad)
}

/// Loss of one sequence's batch and its gradients under `scope`.
pub fn sequence_loss(
    network: &LegNetwork,
    online: &OnlineParams,
    batch: &Batch,
    weights: &LossWeights,
    scope: GradientScope,
) -> Result<(LossTerms, Gradients)> {
    let n = batch.inputs.ncols();
    if n == 0 {
        return Err(Error::InsufficientHistory { needed: 1, available: 0 });
    }
    let inv_n = 1.0 / n as f64;
    let acts = network.forward_batch(&batch.inputs, online)?;

    let mut d_twist = DMatrix::zeros(6, n);
    let mut twist = 0.0;
    for c in 0..n {
        for r in 0..6 {
            let w = if r < 3 { weights.rotation } else { 1.0 };
            let e = acts.twist[(r, c)] - batch.twists[(r, c)];
            twist += w * e * e;
            d_twist[(r, c)] = 2.0 * w * e * inv_n;
        }
    }
    twist *= inv_n;

    let mut d_contacts = DMatrix::zeros(4, n);
    let mut contact = 0.0;
    for c in 0..n {
        for r in 0..4 {
            let (v, g) = bce(acts.contacts[(r, c)], batch.contacts[(r, c)]);
            contact += v;
            d_contacts[(r, c)] = weights.contact * g * inv_n;
        }
    }
    contact *= inv_n;

    let regularization = acts.adaptive_features.norm_squared() * inv_n;
    let d_adaptive = &acts.adaptive_features * (2.0 * weights.regularization * inv_n);

    let terms = LossTerms {
        total: twist + weights.contact * contact + weights.regularization * regularization,
        twist,
        contact,
        regularization,
    };
    let upstream = Upstream {
        twist: d_twist,
        contacts: Some(d_contacts),
        adaptive_features: Some(d_adaptive),
    };
    let grads = network.backward_batch(&acts, online, &upstream, scope)?;
    Ok((terms, grads))
}
