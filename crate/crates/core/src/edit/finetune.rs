// SPDX-License-Identifier: MIT OR Apache-2.0

use super::config::FinetuneHyper;
use super::request::EditRequest;
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: ModelCheckpoint,
    /// Mean object-token NLL before each step, plus the final value.
    pub losses: Vec<f64>,
}

/// Baseline editor: gradient descent on the object tokens' NLL of every edit
/// sentence, updating only `W_out` of `hyper.layer`. Each step's update is
/// rescaled to at most `max_update_norm` (Frobenius).
pub fn finetune_baseline(
    model: &ModelCheckpoint,
    batch: &[EditRequest],
    hyper: &FinetuneHyper,
) -> Result<FinetuneOutcome> {
    if batch.is_empty() {
        return Err(Error::Arity("edit batch is empty".into()));
    }
    if hyper.layer >= model.config.n_layers {
        return Err(Error::Config(format!("fine-tune layer {} out of range", hyper.layer)));
    }
    let bos = model.tokenizer.specials().bos;
    let examples: Vec<_> = batch
        .iter()
        .map(|r| {
            let mut ids = vec![bos];
            ids.extend_from_slice(&r.sentence.ids);
            let targets: Vec<_> = r.sentence.object.clone().map(|i| (i, r.sentence.ids[i])).collect();
            (ids, targets)
        })
        .collect();

    let loss_and_grad = |m: &ModelCheckpoint| -> Result<(f64, ndarray::Array2<f64>)> {
        let mut loss = 0.0;
        let mut grad = ndarray::Array2::zeros(m.params.layers[hyper.layer].w_out.raw_dim());
        for (ids, targets) in &examples {
            let (l, g) = m.param_grad(ids, targets)?;
            loss += l;
            grad += &g.layers[hyper.layer].w_out;
        }
        let n = examples.len() as f64;
        Ok((loss / n, grad / n))
    };

    let mut edited = model.clone();
    let mut losses = Vec::with_capacity(hyper.steps + 1);
    for step in 0..hyper.steps {
        let (loss, grad) = loss_and_grad(&edited)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, reason: format!("fine-tune loss became {loss}") });
        }
        losses.push(loss);
        let mut update = grad * hyper.lr;
        let norm = update.iter().map(|x| x * x).sum::<f64>().sqrt();
        if hyper.max_update_norm > 0.0 && norm > hyper.max_update_norm {
            update *= hyper.max_update_norm / norm;
        }
        edited.params.layers[hyper.layer].w_out -= &update;
    }
    if hyper.steps > 0 {
        let (loss, _) = loss_and_grad(&edited)?;
        if !loss.is_finite() {
            return Err(Error::Training { step: hyper.steps, reason: format!("fine-tune loss became {loss}") });
        }
        losses.push(loss);
    }
    Ok(FinetuneOutcome { model: edited, losses })
}
