// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Where inside a block an activation is read or written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Post-activation MLP hidden state (the key), length `d_mlp`.
    MlpIntermediate,
    /// MLP output before the residual add (the value), length `d_model`.
    MlpOutput,
    /// Residual stream after the block, length `d_model`.
    ResidualStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationProbe {
    pub layer: usize,
    pub position: usize,
    pub site: Site,
}

impl ActivationProbe {
    pub fn key(layer: usize, position: usize) -> Self {
        Self { layer, position, site: Site::MlpIntermediate }
    }

    pub fn value(layer: usize, position: usize) -> Self {
        Self { layer, position, site: Site::MlpOutput }
    }

    pub(crate) fn validate(&self, cfg: &ModelConfig, seq_len: usize) -> Result<()> {
        if self.layer >= cfg.n_layers {
            return Err(Error::Probe(format!("layer {} out of range ({} layers)", self.layer, cfg.n_layers)));
        }
        if self.position >= seq_len {
            return Err(Error::Probe(format!("position {} out of range (sequence length {seq_len})", self.position)));
        }
        Ok(())
    }
}

/// Target tokens for a negative log-likelihood loss.
///
/// Each entry `(position, token)` names a token at sequence index `position`;
/// it is scored by the next-token distribution at `position - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LossSpec {
    pub targets: Vec<(usize, TokenId)>,
}

impl LossSpec {
    /// Scores `tokens` as the continuation starting at `start`.
    pub fn continuation(start: usize, tokens: &[TokenId]) -> Self {
        Self { targets: tokens.iter().enumerate().map(|(i, &t)| (start + i, t)).collect() }
    }

    /// Logit rows `(position - 1, token)`, checked for causality against the
    /// probe position.
    pub(crate) fn logit_rows(&self, probe_position: usize, seq_len: usize) -> Result<Vec<(usize, TokenId)>> {
        self.targets
            .iter()
            .map(|&(pos, tok)| {
                if pos <= probe_position {
                    return Err(Error::Causality { target: pos, probe: probe_position });
                }
                if pos >= seq_len {
                    return Err(Error::Probe(format!("target position {pos} beyond sequence length {seq_len}")));
                }
                Ok((pos - 1, tok))
            })
            .collect()
    }
}
