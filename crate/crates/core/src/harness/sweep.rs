// SPDX-License-Identifier: MIT OR Apache-2.0

//! Batch-size sweeps over editing modes and dataset kinds.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::experiment::Experiment;
use super::metrics::{evaluate_batch, MetricResult, RecordFlags};
use crate::data::{DatasetKind, EditRecord, SentenceTemplate};
use crate::diagnostics::{akd_over_layers, collision_report_for};
use crate::edit::{apply_edit_batch, finetune_baseline, EditConfig, EditMode, EditRequest};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Memit,
    MemitMerge,
    Finetune,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Memit => "memit",
            SweepMode::MemitMerge => "memit_merge",
            SweepMode::Finetune => "finetune",
        }
    }

    /// The batch editor's mode; `None` for the fine-tuning baseline.
    pub fn edit_mode(self) -> Option<EditMode> {
        match self {
            SweepMode::Memit => Some(EditMode::Memit),
            SweepMode::MemitMerge => Some(EditMode::MemitMerge),
            SweepMode::Finetune => None,
        }
    }
}

impl std::fmt::Display for SweepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    /// Accepts `memit`, `memit-merge` / `memit_merge` and `ft` / `finetune`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memit" => Ok(SweepMode::Memit),
            "memit-merge" | "memit_merge" => Ok(SweepMode::MemitMerge),
            "ft" | "finetune" => Ok(SweepMode::Finetune),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected memit, memit-merge or ft)"))),
        }
    }
}

/// Grid and protocol of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub modes: Vec<SweepMode>,
    pub kinds: Vec<DatasetKind>,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    pub fresh: bool,
    /// 0 means every full batch.
    pub max_batches: usize,
}

impl SweepPlan {
    pub fn from_experiment(exp: &Experiment) -> Self {
        let s = &exp.config.sweep;
        Self {
            modes: s.modes.clone(),
            kinds: vec![DatasetKind::SameSubject, DatasetKind::DistinctSubject],
            batch_sizes: s.batch_sizes.clone(),
            trials: s.trials,
            fresh: s.fresh,
            max_batches: s.max_batches,
        }
    }
}

/// Metrics of one edited batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub trial: usize,
    pub index: usize,
    pub edit_seed: u64,
    /// Dataset indices of the batch's records.
    pub records: Vec<usize>,
    pub efficacy: f64,
    pub efficacy_decode: f64,
    pub efficacy_prob: f64,
    pub paraphrase: f64,
    pub paraphrase_decode: f64,
    pub paraphrase_prob: f64,
    pub specificity: f64,
    /// Key distance at the edit layer; absent for single-edit batches.
    pub akd: Option<f64>,
    pub collision_fraction: f64,
}

fn frac(flags: &[RecordFlags], f: impl Fn(&RecordFlags) -> bool) -> f64 {
    flags.iter().filter(|r| f(r)).count() as f64 / flags.len() as f64
}

impl BatchResult {
    fn new(trial: usize, index: usize, edit_seed: u64, records: Vec<usize>, m: &MetricResult) -> Self {
        let pr = &m.per_record;
        Self {
            trial,
            index,
            edit_seed,
            records,
            efficacy: m.efficacy,
            efficacy_decode: frac(&pr.efficacy, |r| r.decode_match),
            efficacy_prob: frac(&pr.efficacy, |r| r.prob_dominance),
            paraphrase: m.paraphrase,
            paraphrase_decode: frac(&pr.paraphrase, |r| r.decode_match),
            paraphrase_prob: frac(&pr.paraphrase, |r| r.prob_dominance),
            specificity: m.specificity,
            akd: None,
            collision_fraction: 0.0,
        }
    }
}

/// One grid point: a mode, a dataset kind and a batch size, averaged over
/// every batch of every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mode: SweepMode,
    pub kind: DatasetKind,
    pub batch_size: usize,
    pub fresh: bool,
    pub trials: usize,
    pub n_batches: usize,
    pub efficacy: f64,
    pub efficacy_decode: f64,
    pub efficacy_prob: f64,
    pub paraphrase: f64,
    pub paraphrase_decode: f64,
    pub paraphrase_prob: f64,
    pub specificity: f64,
    pub mean_akd: Option<f64>,
    pub batches: Vec<BatchResult>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

impl SweepCell {
    /// Averages `batches`, which must be in trial-major order.
    pub fn from_batches(
        mode: SweepMode,
        kind: DatasetKind,
        batch_size: usize,
        plan: &SweepPlan,
        batches: Vec<BatchResult>,
    ) -> Self {
        let avg = |f: fn(&BatchResult) -> f64| mean(batches.iter().map(f));
        let akds: Vec<f64> = batches.iter().filter_map(|b| b.akd).collect();
        Self {
            mode,
            kind,
            batch_size,
            fresh: plan.fresh,
            trials: plan.trials,
            n_batches: batches.len() / plan.trials,
            efficacy: avg(|b| b.efficacy),
            efficacy_decode: avg(|b| b.efficacy_decode),
            efficacy_prob: avg(|b| b.efficacy_prob),
            paraphrase: avg(|b| b.paraphrase),
            paraphrase_decode: avg(|b| b.paraphrase_decode),
            paraphrase_prob: avg(|b| b.paraphrase_prob),
            specificity: avg(|b| b.specificity),
            mean_akd: (!akds.is_empty()).then(|| mean(akds.iter().copied())),
            batches,
        }
    }
}

/// A full sweep with the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub plan: SweepPlan,
    pub cells: Vec<SweepCell>,
}

/// Record order for `trial`: the dataset order first, then seeded shuffles.
/// The same order is used for every kind, so paired records stay aligned.
fn trial_order(n: usize, trial: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if trial > 0 {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    }
    order
}

/// Edits `model` with one batch in the given mode.
pub fn edit_with_mode(
    exp: &Experiment,
    model: &ModelCheckpoint,
    records: &[EditRecord],
    template: &SentenceTemplate,
    mode: SweepMode,
    edit: &EditConfig,
) -> Result<ModelCheckpoint> {
    let requests =
        records.iter().map(|r| EditRequest::from_record(&model.tokenizer, r, template)).collect::<Result<Vec<_>>>()?;
    match mode.edit_mode() {
        Some(m) => Ok(apply_edit_batch(model, &requests, m, edit, &exp.covariances)?.model),
        None => Ok(finetune_baseline(model, &requests, &exp.config.finetune)?.model),
    }
}

fn run_cell(
    exp: &Experiment,
    plan: &SweepPlan,
    mode: SweepMode,
    kind: DatasetKind,
    b: usize,
    seed: u64,
) -> Result<Vec<BatchResult>> {
    let ds = exp.dataset(kind);
    let n = ds.len();
    let mut n_batches = n / b;
    if plan.max_batches > 0 {
        n_batches = n_batches.min(plan.max_batches);
    }
    let mut out = Vec::with_capacity(n_batches * plan.trials);
    for trial in 0..plan.trials {
        let order = trial_order(n, trial, seed);
        let edit = EditConfig { seed: seed.wrapping_add(trial as u64), ..exp.config.edit.clone() };
        let mut current = exp.base.clone();
        for index in 0..n_batches {
            let idx = order[index * b..(index + 1) * b].to_vec();
            let records: Vec<EditRecord> = idx.iter().map(|&i| ds.records[i].clone()).collect();
            let before = if plan.fresh { &exp.base } else { &current };
            let akd = if b >= 2 {
                let layers = akd_over_layers(before, &records, &ds.edit_template, edit.n_prefixes, edit.seed)?;
                Some(layers[edit.target_layer()].akd)
            } else {
                None
            };
            let edited = edit_with_mode(exp, before, &records, &ds.edit_template, mode, &edit)?;
            let metrics = evaluate_batch(&exp.base, &edited, &records)?;
            let mut r = BatchResult::new(trial, index, edit.seed, idx, &metrics);
            r.akd = akd;
            r.collision_fraction = collision_report_for(&records).collision_fraction;
            log::info!(
                "{mode} {kind} b={b} trial {trial} batch {index}: efficacy {:.2} paraphrase {:.2} specificity {:.2}",
                r.efficacy,
                r.paraphrase,
                r.specificity
            );
            out.push(r);
            if !plan.fresh {
                current = edited;
            }
        }
    }
    Ok(out)
}

/// Runs every (mode, kind, batch size) cell of `plan`. Cells come back in
/// grid order and the stored plan has its axes sorted and deduplicated. A merged-mode cell whose batches are all collision-free is
/// the same computation as plain mode and is copied from it when available.
pub fn run_sweep(exp: &Experiment, plan: &SweepPlan, seed: u64) -> Result<SweepResult> {
    if plan.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if plan.modes.is_empty() || plan.batch_sizes.is_empty() || plan.kinds.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for kind in &plan.kinds {
        let n = exp.dataset(*kind).len();
        if let Some(&b) = plan.batch_sizes.iter().find(|&&b| b == 0 || b > n) {
            return Err(Error::Config(format!("batch size {b} is not in 1..={n}")));
        }
    }
    let mut modes = plan.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    let mut kinds = plan.kinds.clone();
    kinds.sort_unstable();
    kinds.dedup();
    let mut sizes = plan.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let plan = &SweepPlan { modes: modes.clone(), kinds: kinds.clone(), batch_sizes: sizes.clone(), ..plan.clone() };

    let mut done: BTreeMap<(SweepMode, DatasetKind, usize), Vec<BatchResult>> = BTreeMap::new();
    let mut cells = Vec::new();
    for &mode in &modes {
        for &kind in &kinds {
            for &b in &sizes {
                let reuse = match (mode, done.get(&(SweepMode::Memit, kind, b))) {
                    (SweepMode::MemitMerge, Some(prev)) if prev.iter().all(|r| r.collision_fraction == 0.0) => {
                        Some(prev.clone())
                    }
                    _ => None,
                };
                let batches = match reuse {
                    Some(v) => v,
                    None => run_cell(exp, plan, mode, kind, b, seed)?,
                };
                done.insert((mode, kind, b), batches.clone());
                cells.push(SweepCell::from_batches(mode, kind, b, plan, batches));
            }
        }
    }
    Ok(SweepResult {
        seed,
        config_hash: exp.config.hash(),
        checkpoint_hash: exp.base.content_hash(),
        plan: plan.clone(),
        cells,
    })
}
