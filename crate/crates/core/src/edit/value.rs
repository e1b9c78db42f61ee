// SPDX-License-Identifier: MIT OR Apache-2.0

//! Target-value optimization.
//!
//! The MLP output at the subject's last token is replaced by a free vector
//! `v`, and `v` is driven by Adam (on norm-clipped gradients) to make the
//! model emit the requested object. A merged group shares one `v` whose objective is the
//! sum of every member's loss, each member injecting `v` into its own
//! sentence.

use ndarray::{Array1, Array2, Zip};

use super::config::ValueHyper;
use super::keys::mean_activation;
use super::request::{contexts_for, EditContext, EditRequest};
use crate::error::{Error, Result};
use crate::model::{ActivationProbe, LossSpec, ModelCheckpoint, Site};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub layer: usize,
    pub values: Array1<f64>,
    /// Starting point: the mean unedited MLP output over all contexts.
    pub init: Array1<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps_used: usize,
    /// Every member reached the target probability at the returned `v`.
    pub converged: bool,
    /// Optimization never improved on the initial objective although steps
    /// were taken. Reported, not an error.
    pub no_progress: bool,
    /// Mean target probability per group member at the returned `v`.
    pub member_probs: Vec<f64>,
}

struct Member {
    contexts: Vec<EditContext>,
}

struct KlTerm {
    ids: Vec<TokenId>,
    position: usize,
    base_probs: Array1<f64>,
}

struct Objective<'a> {
    model: &'a ModelCheckpoint,
    layer: usize,
    hyper: &'a ValueHyper,
    members: Vec<Member>,
    kl: Vec<KlTerm>,
    init: Array1<f64>,
}

struct Evaluation {
    loss: f64,
    grad: Array1<f64>,
    member_probs: Vec<f64>,
}

impl Objective<'_> {
    fn evaluate(&self, v: &Array1<f64>) -> Result<Evaluation> {
        let mut loss = 0.0;
        let mut grad = Array1::zeros(v.len());
        let mut member_probs = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let n = m.contexts.len() as f64;
            let mut prob = 0.0;
            for c in &m.contexts {
                let probe = ActivationProbe::value(self.layer, c.subject_pos);
                let spec = LossSpec { targets: c.object_targets.clone() };
                let (nll, g) = self.model.grad_wrt_injection(&c.ids, probe, v, &spec)?;
                loss += nll / n;
                grad.scaled_add(1.0 / n, &g);
                prob += (-nll).exp() / n;
            }
            member_probs.push(prob);
        }
        if self.hyper.l2_weight > 0.0 {
            let diff = v - &self.init;
            loss += self.hyper.l2_weight * diff.dot(&diff);
            grad.scaled_add(2.0 * self.hyper.l2_weight, &diff);
        }
        for k in &self.kl {
            let probe = ActivationProbe::value(self.layer, k.position);
            let (kl, g) = self.model.injected_loss_grad(&k.ids, probe, v, |logits| Ok(kl_grad(logits, k)))?;
            loss += self.hyper.kl_weight * kl;
            grad.scaled_add(self.hyper.kl_weight, &g);
        }
        if !loss.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("value objective became {loss}")));
        }
        Ok(Evaluation { loss, grad, member_probs })
    }
}

/// `KL(base || current)` of the next-token distribution at the final row,
/// with its gradient w.r.t. the logits.
fn kl_grad(logits: &Array2<f64>, k: &KlTerm) -> (f64, Array2<f64>) {
    let logp = crate::model::transformer::log_softmax_rows(logits);
    let last = logits.nrows() - 1;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut kl = 0.0;
    for (i, &p0) in k.base_probs.iter().enumerate() {
        if p0 > 0.0 {
            kl += p0 * (p0.ln() - logp[[last, i]]);
        }
    }
    let mut row = d.row_mut(last);
    Zip::from(&mut row).and(&logp.row(last)).and(&k.base_probs).for_each(|g, &lp, &p0| *g = lp.exp() - p0);
    (kl, d)
}

fn kl_term(model: &ModelCheckpoint, request: &EditRequest) -> Result<KlTerm> {
    let tok = &model.tokenizer;
    let mut ids = vec![tok.specials().bos];
    ids.extend(tok.encode_ids(&request.triple.subject)?);
    let position = ids.len() - 1;
    ids.push(tok.id(crate::tokenizer::POSSESSIVE)?);
    let logp = model.forward(&ids)?;
    let base_probs = logp.row(ids.len() - 1).mapv(f64::exp);
    Ok(KlTerm { ids, position, base_probs })
}

/// Optimizes the value for one edit. Identical to a merged group of one.
pub fn optimize_value(
    model: &ModelCheckpoint,
    request: &EditRequest,
    layer: usize,
    hyper: &ValueHyper,
    prefixes: &[Vec<TokenId>],
) -> Result<ValueVector> {
    optimize_value_merged(model, std::slice::from_ref(request), layer, hyper, prefixes)
}

/// Optimizes one shared value for a group of edits with the same subject,
/// minimizing the sum of the members' losses.
pub fn optimize_value_merged(
    model: &ModelCheckpoint,
    group: &[EditRequest],
    layer: usize,
    hyper: &ValueHyper,
    prefixes: &[Vec<TokenId>],
) -> Result<ValueVector> {
    let first = group.first().ok_or_else(|| Error::Arity("value group is empty".into()))?;
    if let Some(other) = group.iter().find(|r| r.subject() != first.subject()) {
        return Err(Error::Config(format!(
            "merged group mixes subjects {:?} and {:?}",
            first.subject(),
            other.subject()
        )));
    }
    if prefixes.is_empty() {
        return Err(Error::Arity("at least one (possibly empty) prefix is required".into()));
    }
    let members =
        group.iter().map(|r| Ok(Member { contexts: contexts_for(model, r, prefixes)? })).collect::<Result<Vec<_>>>()?;
    let all_contexts: Vec<EditContext> = members.iter().flat_map(|m| m.contexts.iter().cloned()).collect();
    let init = mean_activation(model, &all_contexts, layer, Site::MlpOutput)?;
    let kl = if hyper.kl_weight > 0.0 {
        group.iter().map(|r| kl_term(model, r)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let objective = Objective { model, layer, hyper, members, kl, init: init.clone() };

    let mut v = init.clone();
    let mut eval = objective.evaluate(&v)?;
    let initial_loss = eval.loss;
    let mut best = (v.clone(), eval.loss, eval.member_probs.clone());
    let mut steps_used = 0;
    let reached = |probs: &[f64]| probs.iter().all(|&p| p >= hyper.target_prob);

    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = Array1::<f64>::zeros(v.len());
    let mut s = Array1::<f64>::zeros(v.len());
    while steps_used < hyper.max_steps && !reached(&eval.member_probs) {
        let norm = eval.grad.dot(&eval.grad).sqrt();
        let scale = if hyper.grad_clip > 0.0 && norm > hyper.grad_clip { hyper.grad_clip / norm } else { 1.0 };
        steps_used += 1;
        let t = steps_used as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        Zip::from(&mut v).and(&mut m).and(&mut s).and(&eval.grad).for_each(|v, m, s, &g| {
            let g = g * scale;
            *m = b1 * *m + (1.0 - b1) * g;
            *s = b2 * *s + (1.0 - b2) * g * g;
            *v -= hyper.lr * (*m / c1) / ((*s / c2).sqrt() + eps);
        });
        eval = objective.evaluate(&v)?;
        if eval.loss < best.1 {
            best = (v.clone(), eval.loss, eval.member_probs.clone());
        }
    }

    let (values, final_loss, member_probs) = best;
    Ok(ValueVector {
        layer,
        converged: reached(&member_probs),
        no_progress: steps_used > 0 && final_loss >= initial_loss,
        values,
        init,
        initial_loss,
        final_loss,
        steps_used,
        member_probs,
    })
}
