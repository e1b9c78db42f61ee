// SPDX-License-Identifier: MIT OR Apache-2.0

//! One structured file that pins down a whole experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataConfig, SentenceTemplate};
use crate::edit::{EditConfig, FinetuneHyper};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainHyper};

use super::sweep::SweepMode;

/// Model shape without the vocabulary size, which comes from the tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let r = ModelConfig::reference(0);
        Self {
            n_layers: r.n_layers,
            d_model: r.d_model,
            d_mlp: r.d_mlp,
            n_heads: r.n_heads,
            max_seq_len: r.max_seq_len,
            rng_seed: r.rng_seed,
        }
    }
}

impl ArchConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            d_mlp: self.d_mlp,
            n_heads: self.n_heads,
            vocab_size,
            max_seq_len: self.max_seq_len,
            rng_seed: self.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<SweepMode>,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    /// Edit a fresh copy of the base model per batch (otherwise accumulate).
    pub fresh: bool,
    /// Cap on batches per cell; 0 means every full batch.
    pub max_batches: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: vec![SweepMode::Memit, SweepMode::MemitMerge],
            batch_sizes: vec![1, 2, 5, 10],
            trials: 1,
            fresh: true,
            max_batches: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AkdExperimentConfig {
    pub templates: Vec<SentenceTemplate>,
    pub batch_size: usize,
    pub max_batches: usize,
}

impl Default for AkdExperimentConfig {
    fn default() -> Self {
        Self { templates: SentenceTemplate::builtins(), batch_size: 10, max_batches: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Minimum base-fact recall accepted after training.
    pub recall_threshold: f64,
    pub data: DataConfig,
    pub model: ArchConfig,
    pub train: TrainHyper,
    pub edit: EditConfig,
    pub finetune: FinetuneHyper,
    pub sweep: SweepConfig,
    pub akd: AkdExperimentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            recall_threshold: 0.95,
            data: DataConfig::default(),
            model: ArchConfig::default(),
            train: TrainHyper { steps: 2500, lr: 2e-3, seed: 1, ..TrainHyper::default() },
            edit: EditConfig::default(),
            finetune: FinetuneHyper::default(),
            sweep: SweepConfig::default(),
            akd: AkdExperimentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Overrides every seed with one derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.model.rng_seed = seed;
        self.train.seed = seed;
        self.edit.seed = seed;
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 over the JSON form of `value`. Struct fields serialize in
/// declaration order and floats in shortest round-trip form, so equal values
/// always hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    crate::model::hex(&Sha256::digest(&json))
}
