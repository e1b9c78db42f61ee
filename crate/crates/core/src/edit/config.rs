// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient-descent settings for value optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueHyper {
    pub lr: f64,
    /// Gradients are rescaled to at most this norm before each step.
    pub grad_clip: f64,
    pub max_steps: usize,
    /// Stop once every target's probability reaches this value.
    pub target_prob: f64,
    /// Weight of `||v - v_init||^2` in the objective.
    pub l2_weight: f64,
    /// Weight of a KL term keeping the next-token distribution after
    /// `"{subject}'s"` close to the unedited model. Zero disables it.
    pub kl_weight: f64,
}

impl Default for ValueHyper {
    fn default() -> Self {
        Self { lr: 0.5, grad_clip: 1.0, max_steps: 100, target_prob: 0.99, l2_weight: 0.0, kl_weight: 0.0 }
    }
}

/// Settings for the key second-moment estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceHyper {
    pub lambda_scale: f64,
    pub sample_tokens: usize,
    /// Extra copies of each sample sentence behind a model-sampled prefix.
    pub prefixed_copies: usize,
    /// Number of distinct prefixes those copies draw from.
    pub prefix_pool: usize,
}

impl Default for CovarianceHyper {
    fn default() -> Self {
        Self { lambda_scale: 100.0, sample_tokens: 10_000, prefixed_copies: 6, prefix_pool: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Layers whose `W_out` is rewritten; targets are computed at the last.
    pub layers: Vec<usize>,
    pub n_prefixes: usize,
    pub prefix_min_len: usize,
    pub prefix_max_len: usize,
    pub value: ValueHyper,
    pub covariance: CovarianceHyper,
    /// Relative diagonal jitter used when `C + K K^T` is numerically singular.
    pub solver_jitter: f64,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            layers: vec![0],
            n_prefixes: 4,
            prefix_min_len: 2,
            prefix_max_len: 8,
            value: ValueHyper::default(),
            covariance: CovarianceHyper::default(),
            solver_jitter: 1e-8,
            seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("edit layer range is empty".into()));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= n_layers) {
            return Err(Error::Config(format!("edit layer {l} out of range ({n_layers} layers)")));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("edit layers must be strictly increasing".into()));
        }
        if self.prefix_min_len > self.prefix_max_len {
            return Err(Error::Config("prefix_min_len exceeds prefix_max_len".into()));
        }
        if self.covariance.lambda_scale.is_nan() || self.covariance.lambda_scale <= 0.0 {
            return Err(Error::Config("lambda_scale must be positive".into()));
        }
        Ok(())
    }

    /// The layer at which target values are optimized.
    pub fn target_layer(&self) -> usize {
        *self.layers.last().expect("validated non-empty")
    }
}

/// Settings for the fine-tuning baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneHyper {
    pub layer: usize,
    pub steps: usize,
    pub lr: f64,
    /// Each step's update to `W_out` is rescaled to at most this Frobenius norm.
    pub max_update_norm: f64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self { layer: 0, steps: 25, lr: 0.5, max_update_norm: 1.0 }
    }
}
