// SPDX-License-Identifier: MIT OR Apache-2.0

//! Key geometry of an edit batch, computed before any editing happens.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::{EditRecord, SentenceTemplate};
use crate::edit::{compute_key_with_prefixes, sample_prefixes, EditRequest};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;

/// Average pairwise key distance of a batch at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AKDReport {
    pub layer: usize,
    pub akd: f64,
    pub n_edits: usize,
    /// Distances in `(i, j)` order with `i < j`, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise_distances: Option<Vec<f64>>,
}

impl AKDReport {
    pub const CSV_HEADER: [&'static str; 3] = ["layer", "akd", "n_edits"];

    pub fn csv_row(&self) -> [String; 3] {
        [self.layer.to_string(), format!("{:?}", self.akd), self.n_edits.to_string()]
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance over all unordered pairs of `keys`. The report's
/// layer is left at 0; see [`akd_at`].
pub fn akd<K: AsRef<[f64]>>(keys: &[K]) -> Result<AKDReport> {
    akd_at(0, keys, false)
}

/// [`akd`] tagged with a layer, optionally keeping every pairwise distance.
pub fn akd_at<K: AsRef<[f64]>>(layer: usize, keys: &[K], keep_pairs: bool) -> Result<AKDReport> {
    let n = keys.len();
    if n < 2 {
        return Err(Error::Arity(format!("AKD needs at least 2 keys, got {n}")));
    }
    let dim = keys[0].as_ref().len();
    if let Some(bad) = keys.iter().find(|k| k.as_ref().len() != dim) {
        return Err(Error::Shape(format!("key lengths {} and {} differ", dim, bad.as_ref().len())));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(euclid(keys[i].as_ref(), keys[j].as_ref()));
        }
    }
    let akd = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok(AKDReport { layer, akd, n_edits: n, pairwise_distances: keep_pairs.then_some(dists) })
}

/// AKD at every layer, from the same prefix-averaged keys the editor uses.
pub fn akd_over_layers(
    model: &ModelCheckpoint,
    batch: &[EditRecord],
    template: &SentenceTemplate,
    n_prefixes: usize,
    seed: u64,
) -> Result<Vec<AKDReport>> {
    if batch.len() < 2 {
        return Err(Error::Arity(format!("AKD needs at least 2 edits, got {}", batch.len())));
    }
    let requests =
        batch.iter().map(|r| EditRequest::from_record(&model.tokenizer, r, template)).collect::<Result<Vec<_>>>()?;
    let prefixes = sample_prefixes(model, n_prefixes, 2, 8, seed)?;
    (0..model.config.n_layers)
        .map(|layer| {
            let keys = requests
                .iter()
                .map(|r| Ok(compute_key_with_prefixes(model, r, layer, &prefixes)?.values))
                .collect::<Result<Vec<Array1<f64>>>>()?;
            let slices: Vec<&[f64]> = keys.iter().map(|k| k.as_slice().expect("contiguous key")).collect();
            akd_at(layer, &slices, false)
        })
        .collect()
}

/// How a batch splits into same-subject groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// Edit indices per subject.
    pub groups: BTreeMap<String, Vec<usize>>,
    pub max_group_size: usize,
    /// `(n_edits - n_groups) / n_edits`.
    pub collision_fraction: f64,
}

impl CollisionReport {
    pub const CSV_HEADER: [&'static str; 4] = ["n_edits", "n_groups", "max_group_size", "collision_fraction"];

    pub fn n_edits(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn csv_row(&self) -> [String; 4] {
        [
            self.n_edits().to_string(),
            self.groups.len().to_string(),
            self.max_group_size.to_string(),
            format!("{:?}", self.collision_fraction),
        ]
    }
}

/// Groups a batch by subject string. An empty batch gives an empty report.
pub fn collision_report<S: AsRef<str>>(subjects: &[S]) -> CollisionReport {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        groups.entry(s.as_ref().to_string()).or_default().push(i);
    }
    let n = subjects.len();
    let collision_fraction = if n == 0 { 0.0 } else { (n - groups.len()) as f64 / n as f64 };
    let max_group_size = groups.values().map(Vec::len).max().unwrap_or(0);
    CollisionReport { groups, max_group_size, collision_fraction }
}

/// [`collision_report`] over records.
pub fn collision_report_for(batch: &[EditRecord]) -> CollisionReport {
    let subjects: Vec<&str> = batch.iter().map(|r| r.triple.subject.as_str()).collect();
    collision_report(&subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_checked_values() {
        assert_eq!(akd(&[[0.0, 0.0], [3.0, 4.0]]).unwrap().akd, 5.0);
        let r = akd(&[[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]]).unwrap();
        assert!((r.akd - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.n_edits, 3);
    }

    #[test]
    fn identical_keys_are_exactly_zero() {
        let k = [0.3, -1.7, 2.25];
        assert_eq!(akd(&[k; 5]).unwrap().akd, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(akd(&[[1.0]]), Err(Error::Arity(_))));
        let empty: [[f64; 1]; 0] = [];
        assert!(matches!(akd(&empty), Err(Error::Arity(_))));
        assert!(matches!(akd(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn pairwise_list_is_kept_on_request() {
        let r = akd_at(2, &[[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]], true).unwrap();
        assert_eq!(r.pairwise_distances.unwrap(), vec![5.0, 10.0, 5.0]);
        assert_eq!(r.layer, 2);
    }

    #[test]
    fn collision_examples() {
        let r = collision_report(&["A", "B", "C"]);
        assert_eq!((r.groups.len(), r.collision_fraction), (3, 0.0));
        let r = collision_report(&["A"; 4]);
        assert_eq!((r.groups.len(), r.max_group_size, r.collision_fraction), (1, 4, 0.75));
        let r = collision_report(&["A", "A", "B"]);
        assert_eq!(r.groups["A"], vec![0, 1]);
        assert_eq!(r.groups["B"], vec![2]);
        assert!((r.collision_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    fn keys_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..7, 1usize..5)
            .prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n))
    }

    proptest! {
        #[test]
        fn permutation_invariant(keys in keys_strategy(), rot in 0usize..7) {
            let mut p = keys.clone();
            p.rotate_left(rot % keys.len());
            p.reverse();
            let a = akd(&keys).unwrap().akd;
            let b = akd(&p).unwrap().akd;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn scales_linearly(keys in keys_strategy(), c in -5.0..5.0f64) {
            let scaled: Vec<Vec<f64>> = keys.iter().map(|k| k.iter().map(|x| c * x).collect()).collect();
            let a = akd(&keys).unwrap().akd;
            let b = akd(&scaled).unwrap().akd;
            prop_assert!((b - c.abs() * a).abs() <= 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn duplicate_recomputed_from_definition(keys in keys_strategy(), pick in 0usize..7) {
            let mut k2 = keys.clone();
            k2.push(keys[pick % keys.len()].clone());
            let n = k2.len();
            let mut sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    sum += euclid(&k2[i], &k2[j]);
                }
            }
            let expect = sum / (n * (n - 1) / 2) as f64;
            prop_assert!((akd(&k2).unwrap().akd - expect).abs() <= 1e-12 * expect.max(1.0));
        }

        #[test]
        fn groups_partition_the_batch(subjects in prop::collection::vec(0u8..4, 0..12)) {
            let names: Vec<String> = subjects.iter().map(|s| format!("S{s}")).collect();
            let r = collision_report(&names);
            let mut seen: Vec<usize> = r.groups.values().flatten().copied().collect();
            for idx in r.groups.values() {
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| names[i] == names[idx[0]]));
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..names.len()).collect::<Vec<_>>());
        }
    }
}
