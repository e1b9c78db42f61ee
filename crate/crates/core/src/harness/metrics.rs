// SPDX-License-Identifier: MIT OR Apache-2.0

//! Efficacy, paraphrase and specificity.
//!
//! A completion passes only when greedy decoding reproduces the requested
//! object *and* the requested object is more likely than the old one. Both
//! sub-flags are kept so either convention can be recomputed.

use serde::{Deserialize, Serialize};

use crate::data::{EditRecord, SpecificityProbe};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionFlags {
    pub decode_match: bool,
    pub prob_dominance: bool,
}

impl CompletionFlags {
    pub fn passed(&self) -> bool {
        self.decode_match && self.prob_dominance
    }
}

/// Judges whether `model` completes `prompt` (no `<bos>`) with `new_object`
/// rather than `old_object`.
pub fn judge_completion(
    model: &ModelCheckpoint,
    prompt: &[TokenId],
    new_object: &[TokenId],
    old_object: &[TokenId],
) -> Result<CompletionFlags> {
    let mut ids = Vec::with_capacity(prompt.len() + 1);
    ids.push(model.tokenizer.specials().bos);
    ids.extend_from_slice(prompt);
    let decoded = model.greedy(&ids, new_object.len())?;
    let lp_new = model.sequence_logprob(&ids, new_object)?;
    let lp_old = model.sequence_logprob(&ids, old_object)?;
    Ok(CompletionFlags { decode_match: decoded == new_object, prob_dominance: lp_new > lp_old })
}

/// Splits a sentence into prompt and object tokens.
pub fn split_object(model: &ModelCheckpoint, sentence: &str, object: &str) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    let tok = &model.tokenizer;
    let ids = tok.encode_ids(sentence)?;
    let obj = tok.encode_ids(object)?;
    if obj.is_empty() || !ids.ends_with(&obj) || ids.len() == obj.len() {
        return Err(Error::Config(format!("sentence {sentence:?} does not end with object {object:?}")));
    }
    Ok((ids[..ids.len() - obj.len()].to_vec(), obj))
}

/// Per-record result of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFlags {
    pub passed: bool,
    pub decode_match: bool,
    pub prob_dominance: bool,
    /// Specificity only: the record had no probes and passed vacuously.
    #[serde(default)]
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub mean: f64,
    pub records: Vec<RecordFlags>,
}

impl MetricFlags {
    fn from_records(records: Vec<RecordFlags>) -> Self {
        let mean = records.iter().filter(|r| r.passed).count() as f64 / records.len() as f64;
        Self { mean, records }
    }
}

/// The three metrics for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub efficacy: f64,
    pub paraphrase: f64,
    pub specificity: f64,
    pub per_record: PerRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRecord {
    pub efficacy: Vec<RecordFlags>,
    pub paraphrase: Vec<RecordFlags>,
    pub specificity: Vec<RecordFlags>,
}

fn eval_sentences<'a, I>(model: &ModelCheckpoint, items: I) -> Result<MetricFlags>
where
    I: IntoIterator<Item = (&'a str, &'a EditRecord)>,
{
    let mut out = Vec::new();
    for (sentence, r) in items {
        let (prompt, new_ids) = split_object(model, sentence, &r.triple.object)?;
        let old_ids = model.tokenizer.encode_ids(&r.old_object)?;
        let f = judge_completion(model, &prompt, &new_ids, &old_ids)?;
        out.push(RecordFlags {
            passed: f.passed(),
            decode_match: f.decode_match,
            prob_dominance: f.prob_dominance,
            vacuous: false,
        });
    }
    if out.is_empty() {
        return Err(Error::Arity("metric over zero records".into()));
    }
    Ok(MetricFlags::from_records(out))
}

pub fn eval_efficacy(model: &ModelCheckpoint, records: &[EditRecord]) -> Result<MetricFlags> {
    eval_sentences(model, records.iter().map(|r| (r.edit_sentence.as_str(), r)))
}

pub fn eval_paraphrase(model: &ModelCheckpoint, records: &[EditRecord]) -> Result<MetricFlags> {
    eval_sentences(model, records.iter().map(|r| (r.paraphrase_sentence.as_str(), r)))
}

/// Greedy answer to a probe: as many tokens as its expected object has.
fn probe_answer(model: &ModelCheckpoint, probe: &SpecificityProbe) -> Result<Vec<TokenId>> {
    let tok = &model.tokenizer;
    let mut ids = vec![tok.specials().bos];
    ids.extend(tok.encode_ids(probe.prompt()?)?);
    let n = tok.encode_ids(&probe.expected_object)?.len();
    model.greedy(&ids, n)
}

pub fn check_compatible(a: &ModelCheckpoint, b: &ModelCheckpoint) -> Result<()> {
    if a.config != b.config {
        return Err(Error::Compatibility("model configurations differ".into()));
    }
    if a.tokenizer != b.tokenizer {
        return Err(Error::Compatibility("tokenizer vocabularies differ".into()));
    }
    Ok(())
}

/// A record passes when every probe gets the same greedy answer before and
/// after the edit. Records without probes pass and are flagged `vacuous`.
pub fn eval_specificity(
    before: &ModelCheckpoint,
    after: &ModelCheckpoint,
    records: &[EditRecord],
) -> Result<MetricFlags> {
    check_compatible(before, after)?;
    if records.is_empty() {
        return Err(Error::Arity("metric over zero records".into()));
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut ok = true;
        for p in &r.specificity_probes {
            ok &= probe_answer(before, p)? == probe_answer(after, p)?;
        }
        let vacuous = r.specificity_probes.is_empty();
        if vacuous {
            log::info!("record {:?} has no specificity probes; passes vacuously", r.triple);
        }
        out.push(RecordFlags { passed: ok, decode_match: ok, prob_dominance: ok, vacuous });
    }
    Ok(MetricFlags::from_records(out))
}

/// All three metrics for a batch.
pub fn evaluate_batch(
    before: &ModelCheckpoint,
    after: &ModelCheckpoint,
    records: &[EditRecord],
) -> Result<MetricResult> {
    let e = eval_efficacy(after, records)?;
    let p = eval_paraphrase(after, records)?;
    let s = eval_specificity(before, after, records)?;
    Ok(MetricResult {
        efficacy: e.mean,
        paraphrase: p.mean,
        specificity: s.mean,
        per_record: PerRecord { efficacy: e.records, paraphrase: p.records, specificity: s.records },
    })
}
