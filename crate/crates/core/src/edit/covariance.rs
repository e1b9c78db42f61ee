// SPDX-License-Identifier: MIT OR Apache-2.0

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::request::sample_prefixes;
use crate::error::{Error, Result};
use crate::model::{ModelCheckpoint, Site};
use crate::tokenizer::TokenId;

/// `lambda_scale * E[k k^T]` over keys of a reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub layer: usize,
    pub matrix: Array2<f64>,
    pub sample_count: usize,
    pub lambda_scale: f64,
    /// Set when the sample was empty and `lambda_scale * I` was used.
    pub identity_fallback: bool,
}

/// Second moment of the rows of `keys` (`[n, d_mlp]`), scaled by
/// `lambda_scale`. An empty sample falls back to `lambda_scale * I`.
pub fn covariance_from_keys(layer: usize, keys: &Array2<f64>, lambda_scale: f64) -> CovarianceEstimate {
    let n = keys.nrows();
    if n == 0 {
        warn!("empty covariance sample at layer {layer}; using lambda * I");
        return CovarianceEstimate {
            layer,
            matrix: Array2::eye(keys.ncols()) * lambda_scale,
            sample_count: 0,
            lambda_scale,
            identity_fallback: true,
        };
    }
    let mut m = keys.t().dot(keys);
    m *= lambda_scale / n as f64;
    // exact symmetry
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    CovarianceEstimate { layer, matrix: m, sample_count: n, lambda_scale, identity_fallback: false }
}

/// Estimates the preservation matrix at `layer` from keys read at up to
/// `max_tokens` randomly chosen token positions of `sample` (each sentence
/// is prefixed with `<bos>`; the `<bos>` position itself is skipped).
pub fn estimate_covariance(
    model: &ModelCheckpoint,
    sample: &[Vec<TokenId>],
    layer: usize,
    lambda_scale: f64,
    max_tokens: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    if layer >= model.config.n_layers {
        return Err(Error::Probe(format!("layer {layer} out of range")));
    }
    let bos = model.tokenizer.specials().bos;
    let mut positions: Vec<(usize, usize)> =
        sample.iter().enumerate().flat_map(|(i, s)| (1..=s.len()).map(move |t| (i, t))).collect();
    positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    positions.truncate(max_tokens);
    positions.sort_unstable();

    let d_mlp = model.config.d_mlp;
    let mut keys = Array2::zeros((positions.len(), d_mlp));
    let mut row = 0;
    for chunk in positions.chunk_by(|a, b| a.0 == b.0) {
        let sentence = chunk[0].0;
        let mut ids = vec![bos];
        ids.extend_from_slice(&sample[sentence]);
        let last = chunk.last().expect("non-empty chunk").1;
        let acts = model.read_site(&ids[..=last], layer, Site::MlpIntermediate)?;
        for &(_, t) in chunk {
            keys.row_mut(row).assign(&acts.row(t));
            row += 1;
        }
    }
    let est = covariance_from_keys(layer, &keys, lambda_scale);
    if est.matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite covariance at layer {layer}")));
    }
    Ok(est)
}

/// `sentences` plus `copies` variants of each behind a prefix drawn from a
/// pool of `pool` model-sampled prefixes, so the estimate also covers the
/// prefixed contexts edit keys are averaged over.
pub fn covariance_sample(
    model: &ModelCheckpoint,
    sentences: &[Vec<TokenId>],
    copies: usize,
    pool: usize,
    prefix_len: (usize, usize),
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    let mut out = sentences.to_vec();
    if copies == 0 || pool == 0 {
        return Ok(out);
    }
    let prefixes = sample_prefixes(model, pool, prefix_len.0, prefix_len.1, seed ^ 0x2545_f491_4f6c_dd1d)?;
    let prefixes = &prefixes[1..];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = model.config.max_seq_len.saturating_sub(1);
    for s in sentences {
        for _ in 0..copies {
            let p = &prefixes[rng.random_range(0..prefixes.len())];
            let mut ids = p[..p.len().min(room.saturating_sub(s.len()))].to_vec();
            ids.extend_from_slice(s);
            out.push(ids);
        }
    }
    Ok(out)
}
