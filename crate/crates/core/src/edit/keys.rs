// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array1;

use super::request::{contexts_for, sample_prefixes, EditContext, EditRequest};
use crate::error::{Error, Result};
use crate::model::{ActivationProbe, ModelCheckpoint, Site};
use crate::tokenizer::TokenId;

/// MLP intermediate activation at the subject's last token, averaged over
/// the prefixed contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyVector {
    pub layer: usize,
    pub values: Array1<f64>,
    /// Number of sampled prefixes (the empty prefix is always included too).
    pub prefix_count: usize,
}

/// Key for `request` at `layer`, with `n_prefixes` prefixes sampled from
/// `seed` (lengths 2..=8).
pub fn compute_key(
    model: &ModelCheckpoint,
    request: &EditRequest,
    layer: usize,
    n_prefixes: usize,
    seed: u64,
) -> Result<KeyVector> {
    let prefixes = sample_prefixes(model, n_prefixes, 2, 8, seed)?;
    compute_key_with_prefixes(model, request, layer, &prefixes)
}

/// Key for `request` over explicit prefixes (the first is normally empty).
pub fn compute_key_with_prefixes(
    model: &ModelCheckpoint,
    request: &EditRequest,
    layer: usize,
    prefixes: &[Vec<TokenId>],
) -> Result<KeyVector> {
    let contexts = contexts_for(model, request, prefixes)?;
    let values = mean_activation(model, &contexts, layer, Site::MlpIntermediate)?;
    Ok(KeyVector { layer, values, prefix_count: prefixes.len().saturating_sub(1) })
}

/// Mean of one activation site at each context's subject position.
pub(crate) fn mean_activation(
    model: &ModelCheckpoint,
    contexts: &[EditContext],
    layer: usize,
    site: Site,
) -> Result<Array1<f64>> {
    let (first, rest) =
        contexts.split_first().ok_or_else(|| Error::Arity("at least one context is required".into()))?;
    let probe = |c: &EditContext| ActivationProbe { layer, position: c.subject_pos, site };
    let mut sum = model.read_activation(first.key_ids(), probe(first))?;
    for c in rest {
        sum += &model.read_activation(c.key_ids(), probe(c))?;
    }
    if !rest.is_empty() {
        sum /= contexts.len() as f64;
    }
    if sum.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activation at layer {layer}")));
    }
    Ok(sum)
}
