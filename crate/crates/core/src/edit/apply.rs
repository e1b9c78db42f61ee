// SPDX-License-Identifier: MIT OR Apache-2.0

//! Batch editing: keys, values, grouping and the per-layer rewrite.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::EditConfig;
use super::covariance::{covariance_sample, estimate_covariance, CovarianceEstimate};
use super::keys::mean_activation;
use super::request::{contexts_for, sample_prefixes, EditContext, EditRequest};
use super::update::closed_form_update;
use super::value::{optimize_value_merged, ValueVector};
use crate::error::{Error, Result};
use crate::harness::metrics::judge_completion;
use crate::model::{ModelCheckpoint, Site};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    /// One key/value column per edit.
    Memit,
    /// One shared value (and column) per group of edits with the same subject.
    MemitMerge,
}

impl EditMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EditMode::Memit => "memit",
            EditMode::MemitMerge => "memit_merge",
        }
    }
}

/// Preservation matrices for the layers an edit may touch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovarianceSet {
    by_layer: BTreeMap<usize, CovarianceEstimate>,
}

impl CovarianceSet {
    /// Estimates one matrix per layer in `layers` from `sample` sentences.
    pub fn estimate(model: &ModelCheckpoint, sample: &[Vec<TokenId>], config: &EditConfig) -> Result<Self> {
        let mut by_layer = BTreeMap::new();
        for &l in &config.layers {
            let est = estimate_covariance(
                model,
                sample,
                l,
                config.covariance.lambda_scale,
                config.covariance.sample_tokens,
                config.seed,
            )?;
            by_layer.insert(l, est);
        }
        Ok(Self { by_layer })
    }

    /// Estimates from corpus sentences, adding the prefixed copies requested
    /// by `config.covariance`.
    pub fn from_corpus(model: &ModelCheckpoint, corpus: &[String], config: &EditConfig) -> Result<Self> {
        let ids = corpus.iter().map(|s| model.tokenizer.encode_ids(s)).collect::<Result<Vec<_>>>()?;
        let sample = covariance_sample(
            model,
            &ids,
            config.covariance.prefixed_copies,
            config.covariance.prefix_pool,
            (config.prefix_min_len, config.prefix_max_len),
            config.seed,
        )?;
        Self::estimate(model, &sample, config)
    }

    pub fn insert(&mut self, est: CovarianceEstimate) {
        self.by_layer.insert(est.layer, est);
    }

    pub fn get(&self, layer: usize) -> Result<&CovarianceEstimate> {
        self.by_layer.get(&layer).ok_or_else(|| Error::Config(format!("no covariance estimate for layer {layer}")))
    }
}

/// Key and value columns written at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    /// `[d_mlp, n_columns]`.
    pub keys: Array2<f64>,
    /// `[d_model, n_columns]`.
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub mode: EditMode,
    pub layer_range: Vec<usize>,
    pub layers: Vec<LayerPlan>,
    /// Column (group id) used by each edit, by batch index.
    pub grouping: Vec<usize>,
}

impl EditPlan {
    pub fn n_columns(&self) -> usize {
        self.grouping.iter().max().map_or(0, |g| g + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditLog {
    pub index: usize,
    pub subject: String,
    pub relation: String,
    pub new_object: String,
    pub old_object: String,
    pub group: usize,
    pub value_steps: usize,
    pub value_initial_loss: f64,
    pub value_final_loss: f64,
    pub value_converged: bool,
    pub value_no_progress: bool,
    /// `||v - W k||` for this edit's own target at the target layer, with
    /// the edited weights.
    pub target_residual: f64,
    pub decode_match: bool,
    pub prob_dominance: bool,
    pub efficacy: bool,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub model: ModelCheckpoint,
    pub plan: EditPlan,
    pub logs: Vec<EditLog>,
    /// Per-edit target values (for merge mode, the group's shared value).
    pub targets: Vec<Array1<f64>>,
}

/// Batch indices per column: one per edit, or one per subject in order of
/// first appearance.
pub fn group_batch(batch: &[EditRequest], mode: EditMode) -> Vec<Vec<usize>> {
    match mode {
        EditMode::Memit => (0..batch.len()).map(|i| vec![i]).collect(),
        EditMode::MemitMerge => {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut by_subject: BTreeMap<&str, usize> = BTreeMap::new();
            for (i, r) in batch.iter().enumerate() {
                match by_subject.get(r.subject()) {
                    Some(&g) => groups[g].push(i),
                    None => {
                        by_subject.insert(r.subject(), groups.len());
                        groups.push(vec![i]);
                    }
                }
            }
            groups
        }
    }
}

fn column_keys(
    model: &ModelCheckpoint,
    contexts: &[Vec<EditContext>],
    groups: &[Vec<usize>],
    layer: usize,
) -> Result<Array2<f64>> {
    let mut k = Array2::zeros((model.config.d_mlp, groups.len()));
    for (g, members) in groups.iter().enumerate() {
        let mut col = mean_activation(model, &contexts[members[0]], layer, Site::MlpIntermediate)?;
        if members.len() > 1 {
            for &m in &members[1..] {
                col += &mean_activation(model, &contexts[m], layer, Site::MlpIntermediate)?;
            }
            col /= members.len() as f64;
        }
        k.column_mut(g).assign(&col);
    }
    Ok(k)
}

fn group_contexts(contexts: &[Vec<EditContext>], members: &[usize]) -> Vec<EditContext> {
    members.iter().flat_map(|&m| contexts[m].iter().cloned()).collect()
}

/// Edits a copy of `model` so that every request in `batch` holds. The input
/// checkpoint is never modified; any error leaves no partial result.
pub fn apply_edit_batch(
    model: &ModelCheckpoint,
    batch: &[EditRequest],
    mode: EditMode,
    config: &EditConfig,
    covariances: &CovarianceSet,
) -> Result<EditOutcome> {
    if batch.is_empty() {
        return Err(Error::Arity("edit batch is empty".into()));
    }
    config.validate(model.config.n_layers)?;
    let target_layer = config.target_layer();
    let prefixes =
        sample_prefixes(model, config.n_prefixes, config.prefix_min_len, config.prefix_max_len, config.seed)?;
    let contexts = batch.iter().map(|r| contexts_for(model, r, &prefixes)).collect::<Result<Vec<_>>>()?;
    let groups = group_batch(batch, mode);
    let mut grouping = vec![0; batch.len()];
    for (g, members) in groups.iter().enumerate() {
        for &m in members {
            grouping[m] = g;
        }
    }

    let values: Vec<ValueVector> = groups
        .iter()
        .map(|members| {
            let reqs: Vec<EditRequest> = members.iter().map(|&m| batch[m].clone()).collect();
            optimize_value_merged(model, &reqs, target_layer, &config.value, &prefixes)
        })
        .collect::<Result<_>>()?;

    // Residual-stream targets at the target layer, one per column.
    let multi = config.layers.len() > 1;
    let targets_z: Vec<Array1<f64>> = if multi {
        groups
            .iter()
            .zip(&values)
            .map(|(members, v)| {
                let z0 =
                    mean_activation(model, &group_contexts(&contexts, members), target_layer, Site::ResidualStream)?;
                Ok(z0 + &(&v.values - &v.init))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut edited = model.clone();
    let mut layer_plans = Vec::with_capacity(config.layers.len());
    for (i, &layer) in config.layers.iter().enumerate() {
        let k = column_keys(&edited, &contexts, &groups, layer)?;
        let w0 = edited.params.layers[layer].w_out.clone();
        let mut v = Array2::zeros((model.config.d_model, groups.len()));
        if multi {
            let remaining = (config.layers.len() - i) as f64;
            let current = w0.dot(&k);
            for (g, members) in groups.iter().enumerate() {
                let z =
                    mean_activation(&edited, &group_contexts(&contexts, members), target_layer, Site::ResidualStream)?;
                let resid = (&targets_z[g] - &z) / remaining;
                v.column_mut(g).assign(&(&current.column(g) + &resid));
            }
        } else {
            for (g, val) in values.iter().enumerate() {
                v.column_mut(g).assign(&val.values);
            }
        }
        let c = covariances.get(layer)?;
        let w = closed_form_update(&w0, &k, &v, &c.matrix, config.solver_jitter)?;
        edited.params.layers[layer].w_out = w;
        layer_plans.push(LayerPlan { layer, keys: k, values: v });
    }
    if !edited.params.all_finite() {
        return Err(Error::Numeric("edited parameters are not finite".into()));
    }

    let last_plan = layer_plans.last().expect("validated non-empty layers");
    let w_final = &edited.params.layers[target_layer].w_out;
    let mut logs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (i, r) in batch.iter().enumerate() {
        let g = grouping[i];
        let val = &values[g];
        let produced = w_final.dot(&last_plan.keys.column(g));
        let target = last_plan.values.column(g).to_owned();
        let old_ids = model.tokenizer.encode_ids(&r.old_object)?;
        let flags = judge_completion(&edited, r.sentence.prompt(), r.sentence.object_ids(), &old_ids)?;
        logs.push(EditLog {
            index: i,
            subject: r.triple.subject.clone(),
            relation: r.triple.relation.clone(),
            new_object: r.triple.object.clone(),
            old_object: r.old_object.clone(),
            group: g,
            value_steps: val.steps_used,
            value_initial_loss: val.initial_loss,
            value_final_loss: val.final_loss,
            value_converged: val.converged,
            value_no_progress: val.no_progress,
            target_residual: (&target - &produced).dot(&(&target - &produced)).sqrt(),
            decode_match: flags.decode_match,
            prob_dominance: flags.prob_dominance,
            efficacy: flags.passed(),
        });
        targets.push(target);
    }

    Ok(EditOutcome {
        model: edited,
        plan: EditPlan { mode, layer_range: config.layers.clone(), layers: layer_plans, grouping },
        logs,
        targets,
    })
}
