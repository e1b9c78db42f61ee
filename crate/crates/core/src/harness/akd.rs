// SPDX-License-Identifier: MIT OR Apache-2.0

//! Key distance against edit success across sentence templates.

use serde::{Deserialize, Serialize};

use super::experiment::Experiment;
use super::metrics::eval_efficacy;
use super::sweep::{edit_with_mode, SweepMode};
use crate::data::{render_sentence, DatasetKind, EditRecord, SentenceTemplate};
use crate::diagnostics::akd_over_layers;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkdRow {
    pub template: String,
    pub kind: DatasetKind,
    pub n_batches: usize,
    /// Mean over batches of the key distance at the edit layer.
    pub akd: f64,
    /// Mean plain-mode efficacy over the same batches.
    pub efficacy: f64,
}

impl AkdRow {
    pub const CSV_HEADER: [&'static str; 5] = ["template", "kind", "n_batches", "akd", "efficacy"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkdTable {
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub batch_size: usize,
    /// Sorted by ascending AKD, ties in (template, kind) order.
    pub rows: Vec<AkdRow>,
    /// Rank correlation of AKD with efficacy; absent when either column is
    /// constant.
    pub spearman: Option<f64>,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks for ties. `None` when the inputs
/// differ in length, have fewer than two points, or either is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// For every template and both dataset kinds, edits up to `max_batches`
/// batches of `batch_size` in plain mode with that template as the edit
/// sentence, recording key distance and efficacy.
pub fn run_akd_experiment(
    exp: &Experiment,
    templates: &[SentenceTemplate],
    batch_size: usize,
    max_batches: usize,
    seed: u64,
) -> Result<AkdTable> {
    if templates.len() < 2 {
        return Err(Error::Arity(format!("need at least 2 templates, got {}", templates.len())));
    }
    if batch_size < 2 {
        return Err(Error::Config("AKD needs batches of at least 2 edits".into()));
    }
    let edit = crate::edit::EditConfig { seed, ..exp.config.edit.clone() };
    let layer = edit.target_layer();
    let mut rows = Vec::new();
    for template in templates {
        for kind in [DatasetKind::SameSubject, DatasetKind::DistinctSubject] {
            let ds = exp.dataset(kind);
            let mut n_batches = ds.len() / batch_size;
            if max_batches > 0 {
                n_batches = n_batches.min(max_batches);
            }
            if n_batches == 0 {
                return Err(Error::Config(format!("batch size {batch_size} exceeds dataset size {}", ds.len())));
            }
            let (mut akd_sum, mut eff_sum) = (0.0, 0.0);
            for chunk in ds.records.chunks_exact(batch_size).take(n_batches) {
                let records: Vec<EditRecord> = chunk
                    .iter()
                    .map(|r| EditRecord { edit_sentence: render_sentence(&r.triple, template), ..r.clone() })
                    .collect();
                akd_sum += akd_over_layers(&exp.base, &records, template, edit.n_prefixes, seed)?[layer].akd;
                let edited = edit_with_mode(exp, &exp.base, &records, template, SweepMode::Memit, &edit)?;
                let eff = eval_efficacy(&edited, &records)?.mean;
                log::info!("akd {} {kind}: efficacy {eff:.2}", template.id);
                eff_sum += eff;
            }
            let n = n_batches as f64;
            rows.push(AkdRow {
                template: template.id.clone(),
                kind,
                n_batches,
                akd: akd_sum / n,
                efficacy: eff_sum / n,
            });
        }
    }
    rows.sort_by(|a, b| a.akd.total_cmp(&b.akd));
    let xs: Vec<f64> = rows.iter().map(|r| r.akd).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.efficacy).collect();
    Ok(AkdTable {
        seed,
        config_hash: exp.config.hash(),
        checkpoint_hash: exp.base.content_hash(),
        batch_size,
        spearman: spearman(&xs, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 30.0, 20.0]), vec![1.0, 3.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0, 0.0]), vec![2.5, 2.5, 4.0, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        // hand-computed: ranks x 1,2,3,4; ranks y 1,2.5,2.5,4 -> 0.9486832980505138
        let r = spearman(&[0.0, 1.0, 2.0, 3.0], &[0.1, 0.5, 0.5, 0.9]).unwrap();
        assert!((r - 3.0 / 10f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_is_bounded_and_monotone_invariant(xs in prop::collection::vec(-50.0..50.0f64, 3..12)) {
            let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
            if let Some(r) = spearman(&xs, &ys) {
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
            let zs: Vec<f64> = xs.iter().rev().copied().collect();
            if let Some(r) = spearman(&xs, &zs) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }
}
