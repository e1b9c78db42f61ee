// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared setup for sweeps: generated data, a trained base model and its
//! preservation matrices.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::split_object;
use crate::data::render_sentence;
use crate::data::{generate, Dataset, DatasetKind, GeneratedData, SentenceTemplate};
use crate::edit::CovarianceSet;
use crate::error::{Error, Result};
use crate::model::{train_base_model, ModelCheckpoint};

/// Greedy recall of the base facts behind both datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_facts: usize,
    /// Fraction recalled with the primary template.
    pub primary: f64,
    /// Fraction recalled with the secondary template.
    pub secondary: f64,
    /// Fraction over both templates together.
    pub recall: f64,
}

/// Fraction of base facts whose object the model produces greedily, per
/// template. Facts shared by both datasets are counted once.
pub fn base_fact_recall(model: &ModelCheckpoint, datasets: &[&Dataset]) -> Result<RecallReport> {
    let mut facts = std::collections::BTreeSet::new();
    for ds in datasets {
        facts.extend(ds.records.iter().map(|r| r.base_triple()));
    }
    if facts.is_empty() {
        return Err(Error::Arity("no base facts to recall".into()));
    }
    let bos = model.tokenizer.specials().bos;
    let mut hits = [0usize; 2];
    for fact in &facts {
        for (i, t) in [SentenceTemplate::primary(), SentenceTemplate::secondary()].iter().enumerate() {
            let (prompt, object) = split_object(model, &render_sentence(fact, t), &fact.object)?;
            let mut ids = vec![bos];
            ids.extend(prompt);
            if model.greedy(&ids, object.len())? == object {
                hits[i] += 1;
            }
        }
    }
    let n = facts.len() as f64;
    Ok(RecallReport {
        n_facts: facts.len(),
        primary: hits[0] as f64 / n,
        secondary: hits[1] as f64 / n,
        recall: (hits[0] + hits[1]) as f64 / (2.0 * n),
    })
}

/// Trains the base model described by `config` on its generated corpus.
pub fn train_from_config(config: &ExperimentConfig, data: &GeneratedData) -> Result<ModelCheckpoint> {
    let model_cfg = config.model.model_config(data.tokenizer.len());
    train_base_model(&model_cfg, &data.tokenizer, &data.corpus, &config.train)
}

/// Fails with [`Error::TrainingShortfall`] when recall is below `threshold`.
pub fn recall_gate(report: &RecallReport, threshold: f64) -> Result<()> {
    if report.recall < threshold {
        return Err(Error::TrainingShortfall { recall: report.recall, threshold });
    }
    Ok(())
}

/// Everything a sweep needs, built once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: GeneratedData,
    pub base: ModelCheckpoint,
    pub covariances: CovarianceSet,
}

impl Experiment {
    /// Regenerates the data from `config` and estimates preservation matrices
    /// for `base`.
    pub fn new(config: ExperimentConfig, base: ModelCheckpoint) -> Result<Self> {
        let data = generate(&config.data)?;
        Self::with_data(config, data, base)
    }

    pub fn with_data(config: ExperimentConfig, data: GeneratedData, base: ModelCheckpoint) -> Result<Self> {
        if base.tokenizer != data.tokenizer {
            return Err(Error::Compatibility("checkpoint vocabulary differs from the generated data".into()));
        }
        config.edit.validate(base.config.n_layers)?;
        let covariances = CovarianceSet::from_corpus(&base, &data.corpus, &config.edit)?;
        Ok(Self { config, data, base, covariances })
    }

    /// Generates data, trains and gates in one go.
    pub fn train(config: ExperimentConfig) -> Result<(Self, RecallReport)> {
        let data = generate(&config.data)?;
        let base = train_from_config(&config, &data)?;
        let recall = base_fact_recall(&base, &[&data.same, &data.distinct])?;
        recall_gate(&recall, config.recall_threshold)?;
        Ok((Self::with_data(config, data, base)?, recall))
    }

    pub fn dataset(&self, kind: DatasetKind) -> &Dataset {
        match kind {
            DatasetKind::SameSubject => &self.data.same,
            DatasetKind::DistinctSubject => &self.data.distinct,
        }
    }
}
