// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy language model: configuration, parameters, forward and reverse
//! passes, activation probes, checkpoint persistence and base training.

mod checkpoint;
mod config;
mod params;
mod probe;
mod train;
pub(crate) mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::{LayerParams, ModelParams};
pub use probe::{ActivationProbe, LossSpec, Site};
pub use train::{train_base_model, TrainHyper, TrainingExample};
pub use transformer::Injection;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

/// Bookkeeping written by the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub steps: u64,
    pub final_loss: f64,
}

/// A complete model: config, parameters, tokenizer and training metadata.
///
/// Checkpoints are immutable values; editing operations return new ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub tokenizer: Tokenizer,
    pub meta: TrainingMeta,
}

impl ModelCheckpoint {
    /// Freshly initialized model. `config.vocab_size` must match the tokenizer.
    pub fn init(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != tokenizer.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match tokenizer size {}",
                config.vocab_size,
                tokenizer.len()
            )));
        }
        let params = ModelParams::init(&config);
        Ok(Self { config, params, tokenizer, meta: TrainingMeta::default() })
    }

    fn check_len(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceLength { len: ids.len(), max: self.config.max_seq_len });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        Ok(())
    }

    /// Next-token log-probabilities, one row per position.
    pub fn forward(&self, ids: &[TokenId]) -> Result<Array2<f64>> {
        self.check_len(ids)?;
        if ids.is_empty() {
            return Ok(Array2::zeros((0, self.config.vocab_size)));
        }
        Ok(transformer::forward(&self.config, &self.params, ids, None, None).log_probs())
    }

    /// Forward pass with the MLP output at `(probe.layer, probe.position)`
    /// replaced by `value`.
    pub fn forward_with_injection(
        &self,
        ids: &[TokenId],
        probe: ActivationProbe,
        value: &Array1<f64>,
    ) -> Result<Array2<f64>> {
        let inj = self.injection(ids, probe, value)?;
        Ok(transformer::forward(&self.config, &self.params, ids, Some(inj), None).log_probs())
    }

    /// Exact reverse-mode gradient of the summed target NLL w.r.t. the
    /// injected value, together with the loss.
    pub fn grad_wrt_injection(
        &self,
        ids: &[TokenId],
        probe: ActivationProbe,
        value: &Array1<f64>,
        loss: &LossSpec,
    ) -> Result<(f64, Array1<f64>)> {
        let rows = loss.logit_rows(probe.position, ids.len())?;
        self.injected_loss_grad(ids, probe, value, |logits| Ok(transformer::nll_grad(logits, &rows)))
    }

    /// Gradient w.r.t. the injected value of an arbitrary loss on the raw
    /// logits; `loss` returns the loss and its gradient w.r.t. the logits.
    pub(crate) fn injected_loss_grad<F>(
        &self,
        ids: &[TokenId],
        probe: ActivationProbe,
        value: &Array1<f64>,
        loss: F,
    ) -> Result<(f64, Array1<f64>)>
    where
        F: FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
    {
        let inj = self.injection(ids, probe, value)?;
        let trace = transformer::forward(&self.config, &self.params, ids, Some(inj), None);
        let (l, dlogits) = loss(trace.logits.as_ref().expect("full pass"))?;
        let grad = transformer::backward(&self.config, &self.params, ids, &trace, Some(inj), &dlogits, None)
            .expect("injection layer is reached by the reverse pass");
        Ok((l, grad))
    }

    /// Loss and full parameter gradient of the summed NLL of `targets`
    /// (`(logit_row, token)` pairs).
    pub(crate) fn param_grad(&self, ids: &[TokenId], targets: &[(usize, TokenId)]) -> Result<(f64, ModelParams)> {
        self.check_len(ids)?;
        let trace = transformer::forward(&self.config, &self.params, ids, None, None);
        let (l, dlogits) = transformer::nll_grad(trace.logits.as_ref().expect("full pass"), targets);
        let mut g = ModelParams::zeros(&self.config);
        transformer::backward(&self.config, &self.params, ids, &trace, None, &dlogits, Some(&mut g));
        Ok((l, g))
    }

    /// Reads the activation named by `probe`. Pure; the model is not touched.
    pub fn read_activation(&self, ids: &[TokenId], probe: ActivationProbe) -> Result<Array1<f64>> {
        self.check_len(ids)?;
        probe.validate(&self.config, ids.len())?;
        let trace = transformer::forward(&self.config, &self.params, ids, None, Some(probe.layer));
        let c = &trace.layers[probe.layer];
        let row = match probe.site {
            Site::MlpIntermediate => c.key.row(probe.position),
            Site::MlpOutput => c.mlp_out.row(probe.position),
            Site::ResidualStream => c.resid_out.row(probe.position),
        };
        Ok(row.to_owned())
    }

    /// One site at `layer` for every position, `[seq_len, width]`.
    pub fn read_site(&self, ids: &[TokenId], layer: usize, site: Site) -> Result<Array2<f64>> {
        self.check_len(ids)?;
        if ids.is_empty() {
            return Err(Error::Arity("cannot read activations of an empty sequence".into()));
        }
        ActivationProbe { layer, position: 0, site }.validate(&self.config, ids.len())?;
        let trace = transformer::forward(&self.config, &self.params, ids, None, Some(layer));
        let c = &trace.layers[layer];
        Ok(match site {
            Site::MlpIntermediate => c.key.clone(),
            Site::MlpOutput => c.mlp_out.clone(),
            Site::ResidualStream => c.resid_out.clone(),
        })
    }

    /// Reads the same probe site at every layer in one pass.
    pub fn read_all_layers(&self, ids: &[TokenId], position: usize, site: Site) -> Result<Vec<Array1<f64>>> {
        self.check_len(ids)?;
        ActivationProbe { layer: 0, position, site }.validate(&self.config, ids.len())?;
        let trace = transformer::forward(&self.config, &self.params, ids, None, Some(self.config.n_layers - 1));
        Ok(trace
            .layers
            .iter()
            .map(|c| match site {
                Site::MlpIntermediate => c.key.row(position).to_owned(),
                Site::MlpOutput => c.mlp_out.row(position).to_owned(),
                Site::ResidualStream => c.resid_out.row(position).to_owned(),
            })
            .collect())
    }

    /// Greedy continuation of `prompt` by `n` tokens.
    pub fn greedy(&self, prompt: &[TokenId], n: usize) -> Result<Vec<TokenId>> {
        let mut ids = prompt.to_vec();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let logp = self.forward(&ids)?;
            let last = logp.row(logp.nrows() - 1);
            let next = argmax(last.iter().copied()) as TokenId;
            out.push(next);
            ids.push(next);
        }
        Ok(out)
    }

    /// Teacher-forced log-probability of `continuation` after `prompt`.
    pub fn sequence_logprob(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
        if prompt.is_empty() {
            return Err(Error::Arity("prompt must contain at least one token".into()));
        }
        let mut ids = prompt.to_vec();
        ids.extend_from_slice(continuation);
        let logp = self.forward(&ids)?;
        Ok(continuation.iter().enumerate().map(|(i, &tok)| logp[[prompt.len() - 1 + i, tok as usize]]).sum())
    }

    /// SHA-256 over config, vocabulary and raw parameter bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.config).as_bytes());
        for w in self.tokenizer.vocab() {
            h.update((w.len() as u32).to_le_bytes());
            h.update(w.as_bytes());
        }
        for (name, a) in self.params.arrays() {
            h.update(name.as_bytes());
            for x in a.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// True when both checkpoints hold bit-identical parameters.
    pub fn params_bit_identical(&self, other: &ModelCheckpoint) -> bool {
        let a = self.params.arrays();
        let b = other.params.arrays();
        a.len() == b.len()
            && a.iter().zip(b.iter()).all(|((na, xa), (nb, xb))| {
                na == nb
                    && xa.shape() == xb.shape()
                    && xa.iter().zip(xb.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    fn injection<'a>(&self, ids: &[TokenId], probe: ActivationProbe, value: &'a Array1<f64>) -> Result<Injection<'a>> {
        self.check_len(ids)?;
        if probe.site != Site::MlpOutput {
            return Err(Error::Probe(format!("injection requires the mlp_output site, got {:?}", probe.site)));
        }
        probe.validate(&self.config, ids.len())?;
        if value.len() != self.config.d_model {
            return Err(Error::Shape(format!(
                "injected vector has length {}, d_model is {}",
                value.len(),
                self.config.d_model
            )));
        }
        Ok(Injection { layer: probe.layer, position: probe.position, value: value.view() })
    }
}

pub(crate) fn argmax<I: IntoIterator<Item = f64>>(it: I) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in it.into_iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
