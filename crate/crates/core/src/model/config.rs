// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the toy decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    /// Width of the MLP intermediate layer, i.e. the key dimension.
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Reference architecture: 3 layers, d_model 128, d_mlp 512, 1 head.
    pub fn reference(vocab_size: usize) -> Self {
        Self { n_layers: 3, d_model: 128, d_mlp: 512, n_heads: 1, vocab_size, max_seq_len: 32, rng_seed: 1 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_mlp", self.d_mlp),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_head_split() {
        let mut c = ModelConfig::reference(10);
        c.validate().unwrap();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.n_heads = 4;
        c.d_mlp = 0;
        assert!(c.validate().is_err());
    }
}
