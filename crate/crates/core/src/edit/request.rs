// SPDX-License-Identifier: MIT OR Apache-2.0

//! Edit requests and the random-prefix contexts they are evaluated in.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EditRecord, KnowledgeTriple, SentenceTemplate, TokenizedSentence};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;
use crate::tokenizer::{TokenId, Tokenizer};

/// One edit: the requested fact rendered to tokens with its spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditRequest {
    pub triple: KnowledgeTriple,
    pub old_object: String,
    pub sentence: TokenizedSentence,
}

impl EditRequest {
    pub fn new(
        tok: &Tokenizer,
        triple: &KnowledgeTriple,
        old_object: &str,
        template: &SentenceTemplate,
    ) -> Result<Self> {
        Ok(Self {
            triple: triple.clone(),
            old_object: old_object.to_string(),
            sentence: TokenizedSentence::render(tok, triple, template)?,
        })
    }

    /// Builds the request for a record rendered with `template`.
    pub fn from_record(tok: &Tokenizer, record: &EditRecord, template: &SentenceTemplate) -> Result<Self> {
        Self::new(tok, &record.triple, &record.old_object, template)
    }

    pub fn subject(&self) -> &str {
        &self.triple.subject
    }
}

/// A sequence fed to the model while editing: `<bos> prefix sentence`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditContext {
    pub ids: Vec<TokenId>,
    /// Position of the subject's last token.
    pub subject_pos: usize,
    /// `(position, token)` of every object token.
    pub object_targets: Vec<(usize, TokenId)>,
}

impl EditContext {
    pub fn new(bos: TokenId, prefix: &[TokenId], sentence: &TokenizedSentence) -> Self {
        let offset = 1 + prefix.len();
        let mut ids = Vec::with_capacity(offset + sentence.ids.len());
        ids.push(bos);
        ids.extend_from_slice(prefix);
        ids.extend_from_slice(&sentence.ids);
        let object_targets = sentence.object.clone().map(|i| (offset + i, sentence.ids[i])).collect();
        Self { ids, subject_pos: offset + sentence.subject_last(), object_targets }
    }

    /// Contexts up to the subject only, which is all a key read needs.
    pub fn key_ids(&self) -> &[TokenId] {
        &self.ids[..=self.subject_pos]
    }
}

/// The empty prefix followed by `n` prefixes sampled from the model at
/// temperature 1, each 2..=8 tokens long by default. Special tokens are never
/// sampled. Deterministic in `seed`.
pub fn sample_prefixes(
    model: &ModelCheckpoint,
    n: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    if min_len > max_len {
        return Err(Error::Config("prefix_min_len exceeds prefix_max_len".into()));
    }
    let sp = model.tokenizer.specials();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let len = rng.random_range(min_len..=max_len);
        let mut ids = vec![sp.bos];
        for _ in 0..len {
            let logp = model.forward(&ids)?;
            let last = logp.row(logp.nrows() - 1);
            let weights: Vec<f64> = last.iter().enumerate().map(|(i, lp)| if i < 4 { 0.0 } else { lp.exp() }).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(format!("prefix sampling: {e}")))?;
            ids.push(dist.sample(&mut rng) as TokenId);
        }
        out.push(ids[1..].to_vec());
    }
    Ok(out)
}

/// One context per prefix for `request`, checked against `max_seq_len`.
pub fn contexts_for(
    model: &ModelCheckpoint,
    request: &EditRequest,
    prefixes: &[Vec<TokenId>],
) -> Result<Vec<EditContext>> {
    let bos = model.tokenizer.specials().bos;
    prefixes
        .iter()
        .map(|p| {
            let c = EditContext::new(bos, p, &request.sentence);
            if c.ids.len() > model.config.max_seq_len {
                return Err(Error::SequenceLength { len: c.ids.len(), max: model.config.max_seq_len });
            }
            Ok(c)
        })
        .collect()
}
