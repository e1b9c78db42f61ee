// SPDX-License-Identifier: MIT OR Apache-2.0

//! Base-model training on a sentence corpus with Adam.

use log::info;
use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{transformer, ModelCheckpoint, ModelConfig, ModelParams, TrainingMeta};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr` after cosine decay.
    pub min_lr_fraction: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Probability that a training sentence is preceded by a fragment of
    /// another sentence, so the model sees facts at shifted positions and
    /// after arbitrary context (as the editor's random prefixes do).
    pub prefix_prob: f64,
    pub prefix_min_len: usize,
    pub prefix_max_len: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            lr: 3e-3,
            warmup_steps: 100,
            min_lr_fraction: 0.1,
            weight_decay: 0.0,
            grad_clip: 1.0,
            prefix_prob: 0.5,
            prefix_min_len: 2,
            prefix_max_len: 8,
            seed: 0,
        }
    }
}

/// One tokenized training sequence: `<bos> [fragment] sentence <eos>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub ids: Vec<TokenId>,
}

fn lr_at(h: &TrainHyper, step: usize) -> f64 {
    if step < h.warmup_steps {
        return h.lr * (step + 1) as f64 / h.warmup_steps as f64;
    }
    let span = (h.steps - h.warmup_steps).max(1) as f64;
    let progress = (step - h.warmup_steps) as f64 / span;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    h.lr * (h.min_lr_fraction + (1.0 - h.min_lr_fraction) * cos)
}

fn make_example(
    sentence: &[TokenId],
    all: &[Vec<TokenId>],
    tok: &Tokenizer,
    h: &TrainHyper,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingExample {
    let sp = tok.specials();
    let mut ids = vec![sp.bos];
    if h.prefix_max_len > 0 && rng.random::<f64>() < h.prefix_prob {
        let other = &all[rng.random_range(0..all.len())];
        let lo = h.prefix_min_len.min(h.prefix_max_len);
        let want = rng.random_range(lo..=h.prefix_max_len);
        let room = max_len.saturating_sub(sentence.len() + 2);
        ids.extend(other.iter().take(want.min(room)));
    }
    ids.extend_from_slice(sentence);
    ids.push(sp.eos);
    TrainingExample { ids }
}

/// Trains a freshly initialized model on `corpus`.
///
/// Deterministic: a fixed `config.rng_seed` and `hyper.seed` give a
/// bit-identical checkpoint. With `steps == 0` the initialization is returned.
pub fn train_base_model(
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    corpus: &[String],
    hyper: &TrainHyper,
) -> Result<ModelCheckpoint> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut model = ModelCheckpoint::init(config.clone(), tokenizer.clone())?;
    let sentences = corpus.iter().map(|s| tokenizer.encode_ids(s)).collect::<Result<Vec<_>>>()?;
    if let Some(s) = sentences.iter().find(|s| s.len() + 2 > config.max_seq_len) {
        return Err(Error::SequenceLength { len: s.len() + 2, max: config.max_seq_len });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut m = ModelParams::zeros(config);
    let mut v = ModelParams::zeros(config);
    let (b1, b2, eps) = (0.9, 0.98, 1e-9);
    let mut last_loss = f64::NAN;

    // Fixed epoch order over sentences keeps every fact equally represented.
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut cursor = order.len();

    for step in 0..hyper.steps {
        let mut grads = ModelParams::zeros(config);
        let mut loss_sum = 0.0;
        let mut n_targets = 0usize;
        for _ in 0..hyper.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex =
                make_example(&sentences[order[cursor]], &sentences, tokenizer, hyper, config.max_seq_len, &mut rng);
            cursor += 1;
            let targets: Vec<(usize, TokenId)> = ex.ids.windows(2).enumerate().map(|(i, w)| (i, w[1])).collect();
            let trace = transformer::forward(config, &model.params, &ex.ids, None, None);
            let (loss, dlogits) = transformer::nll_grad(trace.logits.as_ref().expect("full pass"), &targets);
            transformer::backward(config, &model.params, &ex.ids, &trace, None, &dlogits, Some(&mut grads));
            loss_sum += loss;
            n_targets += targets.len();
        }
        let loss = loss_sum / n_targets as f64;
        if !loss.is_finite() {
            return Err(Error::Training { step, reason: format!("loss became {loss}") });
        }
        last_loss = loss;

        let scale = 1.0 / n_targets as f64;
        let norm = grads.sq_norm().sqrt() * scale;
        let clip = if hyper.grad_clip > 0.0 && norm > hyper.grad_clip { hyper.grad_clip / norm } else { 1.0 };
        let g_scale = scale * clip;
        let lr = lr_at(hyper, step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for (((_, mut p), (_, mut mm)), ((_, mut vv), (_, g))) in model
            .params
            .arrays_mut()
            .into_iter()
            .zip(m.arrays_mut())
            .zip(v.arrays_mut().into_iter().zip(grads.arrays()))
        {
            Zip::from(&mut p).and(&mut mm).and(&mut vv).and(&g).for_each(|p, m, v, &g| {
                let g = g * g_scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * ((*m / c1) / ((*v / c2).sqrt() + eps) + hyper.weight_decay * *p);
            });
        }
        if step % 500 == 0 || step + 1 == hyper.steps {
            info!("train step {step}: loss {loss:.4} lr {lr:.2e}");
        }
    }
    if !model.params.all_finite() {
        return Err(Error::Training { step: hyper.steps, reason: "non-finite parameters".into() });
    }
    model.meta = TrainingMeta { steps: hyper.steps as u64, final_loss: if hyper.steps == 0 { 0.0 } else { last_loss } };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ModelConfig, Tokenizer, Vec<String>) {
        let corpus: Vec<String> = ["Ann's father is Bob", "Ann's mother is Cat", "Dan's father is Eve"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let words: Vec<&str> = corpus.iter().flat_map(|s| s.split_whitespace()).collect();
        let tok = Tokenizer::from_words(words);
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            d_mlp: 32,
            n_heads: 2,
            vocab_size: tok.len(),
            max_seq_len: 16,
            rng_seed: 5,
        };
        (cfg, tok, corpus)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (cfg, tok, corpus) = setup();
        let h = TrainHyper { steps: 0, ..Default::default() };
        let m = train_base_model(&cfg, &tok, &corpus, &h).unwrap();
        assert_eq!(m.params, ModelParams::init(&cfg));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (cfg, tok, corpus) = setup();
        let h = TrainHyper { steps: 60, batch_size: 4, warmup_steps: 5, ..Default::default() };
        let a = train_base_model(&cfg, &tok, &corpus, &h).unwrap();
        let b = train_base_model(&cfg, &tok, &corpus, &h).unwrap();
        assert!(a.params_bit_identical(&b));
        assert_eq!(a.meta.final_loss.to_bits(), b.meta.final_loss.to_bits());

        let ids = tok.encode_ids("Ann's mother is Cat").unwrap();
        let init = ModelCheckpoint::init(cfg, tok.clone()).unwrap();
        let bos = [tok.specials().bos];
        let before = init.sequence_logprob(&bos, &ids).unwrap();
        let after = a.sequence_logprob(&bos, &ids).unwrap();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn empty_corpus_rejected() {
        let (cfg, tok, _) = setup();
        assert!(train_base_model(&cfg, &tok, &[], &TrainHyper::default()).is_err());
    }
}
