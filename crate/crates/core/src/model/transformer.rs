// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-norm decoder-only transformer with a hand-written reverse pass.
//!
//! Block `l` computes
//!
//! ```text
//! x   = x + W_o * attn(LN1(x))
//! key = gelu(W_in * LN2(x) + b_in)
//! x   = x + W_out * key
//! ```
//!
//! The forward pass keeps every intermediate needed by [`backward`]. An
//! optional [`Injection`] replaces the MLP output row of one position at one
//! layer; the reverse pass then reports the gradient with respect to the
//! injected vector.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::{ModelConfig, ModelParams};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Replace the MLP output at `(layer, position)` with `value`.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub layer: usize,
    pub position: usize,
    pub value: ArrayView1<'a, f64>,
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    pre: Array2<f64>,
    pub(crate) key: Array2<f64>,
    pub(crate) mlp_out: Array2<f64>,
    pub(crate) resid_out: Array2<f64>,
}

pub(crate) struct Trace {
    pub(crate) layers: Vec<LayerCache>,
    lnf: Option<LnCache>,
    hf: Option<Array2<f64>>,
    /// Raw logits `[T, V]`; absent when the pass stopped early.
    pub(crate) logits: Option<Array2<f64>>,
}

impl Trace {
    /// Row-wise log-softmax of the logits.
    pub(crate) fn log_probs(&self) -> Array2<f64> {
        let logits = self.logits.as_ref().expect("full forward pass");
        log_softmax_rows(logits)
    }
}

pub(crate) fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

fn ln_forward(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dg, db)) = grads {
        *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xh).for_each(|g, &x| *g = r * (*g - mean_d - x * mean_dx));
    }
    dx
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Runs the model over `ids`. With `stop_after = Some(l)` the pass ends after
/// block `l` and no logits are produced.
pub(crate) fn forward(
    cfg: &ModelConfig,
    p: &ModelParams,
    ids: &[TokenId],
    injection: Option<Injection<'_>>,
    stop_after: Option<usize>,
) -> Trace {
    let t_len = ids.len();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = Array2::zeros((t_len, cfg.d_model));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(t);
        row.assign(&p.tok_emb.row(id as usize));
        row += &p.pos_emb.row(t);
    }

    let last = stop_after.unwrap_or(cfg.n_layers - 1);
    let mut layers = Vec::with_capacity(last + 1);
    for (li, lp) in p.layers.iter().enumerate().take(last + 1) {
        let (a, ln1) = ln_forward(&x, &lp.ln1_gain, &lp.ln1_bias);
        let q = a.dot(&lp.w_q.t());
        let k = a.dot(&lp.w_k.t());
        let v = a.dot(&lp.w_v.t());
        let mut concat = Array2::zeros((t_len, cfg.d_model));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t());
            for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
                let max = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
                let mut sum = 0.0;
                for (j, s) in row.iter_mut().enumerate() {
                    if j <= i {
                        *s = (*s * scale - max).exp();
                        sum += *s;
                    } else {
                        *s = 0.0;
                    }
                }
                row.mapv_inplace(|s| s / sum);
            }
            concat.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        x += &concat.dot(&lp.w_o.t());

        let (m, ln2) = ln_forward(&x, &lp.ln2_gain, &lp.ln2_bias);
        let mut pre = m.dot(&lp.w_in.t());
        pre += &lp.b_in;
        let key = pre.mapv(gelu);
        let mut mlp_out = key.dot(&lp.w_out.t());
        if let Some(inj) = injection.filter(|inj| inj.layer == li) {
            mlp_out.row_mut(inj.position).assign(&inj.value);
        }
        x += &mlp_out;
        layers.push(LayerCache { ln1, a, q, k, v, probs, concat, ln2, m, pre, key, mlp_out, resid_out: x.clone() });
    }

    if stop_after.is_some() {
        return Trace { layers, lnf: None, hf: None, logits: None };
    }
    let (hf, lnf) = ln_forward(&x, &p.lnf_gain, &p.lnf_bias);
    let logits = hf.dot(&p.unembed.t());
    Trace { layers, lnf: Some(lnf), hf: Some(hf), logits: Some(logits) }
}

/// Reverse pass from `dlogits` (gradient of the loss w.r.t. raw logits).
///
/// Accumulates parameter gradients into `grads` when given. Returns the
/// gradient w.r.t. the injected vector when `injection` is set. Without
/// `grads` the pass stops as soon as the injection site is reached.
pub(crate) fn backward(
    cfg: &ModelConfig,
    p: &ModelParams,
    ids: &[TokenId],
    trace: &Trace,
    injection: Option<Injection<'_>>,
    dlogits: &Array2<f64>,
    mut grads: Option<&mut ModelParams>,
) -> Option<Array1<f64>> {
    let hf = trace.hf.as_ref().expect("backward needs a full forward pass");
    let lnf = trace.lnf.as_ref().expect("backward needs a full forward pass");
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    if let Some(g) = grads.as_deref_mut() {
        g.unembed += &dlogits.t().dot(hf);
    }
    let dhf = dlogits.dot(&p.unembed);
    let mut dx = ln_backward(&dhf, lnf, &p.lnf_gain, grads.as_deref_mut().map(|g| (&mut g.lnf_gain, &mut g.lnf_bias)));

    let mut inj_grad = None;
    for li in (0..cfg.n_layers).rev() {
        let lp = &p.layers[li];
        let c = &trace.layers[li];
        let mut gl = grads.as_deref_mut().map(|g| &mut g.layers[li]);

        // MLP branch
        let mut d_out = dx.clone();
        if let Some(inj) = injection.filter(|inj| inj.layer == li) {
            inj_grad = Some(d_out.row(inj.position).to_owned());
            if gl.is_none() {
                return inj_grad;
            }
            d_out.row_mut(inj.position).fill(0.0);
        }
        let mut d_pre = d_out.dot(&lp.w_out);
        Zip::from(&mut d_pre).and(&c.pre).for_each(|g, &x| *g *= gelu_grad(x));
        if let Some(g) = gl.as_deref_mut() {
            g.w_out += &d_out.t().dot(&c.key);
            g.b_in += &d_pre.sum_axis(Axis(0));
            g.w_in += &d_pre.t().dot(&c.m);
        }
        let dm = d_pre.dot(&lp.w_in);
        dx += &ln_backward(&dm, &c.ln2, &lp.ln2_gain, gl.as_mut().map(|g| (&mut g.ln2_gain, &mut g.ln2_bias)));

        // attention branch
        if let Some(g) = gl.as_deref_mut() {
            g.w_o += &dx.t().dot(&c.concat);
        }
        let d_concat = dx.dot(&lp.w_o);
        let t_len = ids.len();
        let mut dq = Array2::zeros((t_len, cfg.d_model));
        let mut dk = Array2::zeros((t_len, cfg.d_model));
        let mut dv = Array2::zeros((t_len, cfg.d_model));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &c.probs[h];
            let d_o = d_concat.slice(cols);
            let mut d_p = d_o.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&d_o));
            for (mut drow, prow) in d_p.rows_mut().into_iter().zip(probs.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut drow).and(&prow).for_each(|d, &pp| *d = pp * (*d - dot) * scale);
            }
            dq.slice_mut(cols).assign(&d_p.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&d_p.t().dot(&c.q.slice(cols)));
        }
        if let Some(g) = gl.as_deref_mut() {
            g.w_q += &dq.t().dot(&c.a);
            g.w_k += &dk.t().dot(&c.a);
            g.w_v += &dv.t().dot(&c.a);
        }
        let mut da = dq.dot(&lp.w_q);
        da += &dk.dot(&lp.w_k);
        da += &dv.dot(&lp.w_v);
        dx += &ln_backward(&da, &c.ln1, &lp.ln1_gain, gl.as_mut().map(|g| (&mut g.ln1_gain, &mut g.ln1_bias)));
    }

    if let Some(g) = grads {
        for (t, &id) in ids.iter().enumerate() {
            let row = dx.row(t);
            let mut e = g.tok_emb.row_mut(id as usize);
            e += &row;
            let mut pe = g.pos_emb.row_mut(t);
            pe += &row;
        }
    }
    inj_grad
}

/// Gradient of `sum_t -log softmax(logits[row_t])[token_t]` w.r.t. logits,
/// with the loss value. `targets` holds `(logit_row, token)` pairs.
pub(crate) fn nll_grad(logits: &Array2<f64>, targets: &[(usize, TokenId)]) -> (f64, Array2<f64>) {
    let logp = log_softmax_rows(logits);
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &(row, tok) in targets {
        loss -= logp[[row, tok as usize]];
        let mut drow = d.row_mut(row);
        Zip::from(&mut drow).and(&logp.row(row)).for_each(|g, &lp| *g += lp.exp());
        drow[tok as usize] -= 1.0;
    }
    (loss, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ModelConfig, ModelParams) {
        let cfg =
            ModelConfig { n_layers: 2, d_model: 8, d_mlp: 12, n_heads: 2, vocab_size: 9, max_seq_len: 8, rng_seed: 7 };
        let mut p = ModelParams::init(&cfg);
        // larger weights so the finite-difference check exercises nonlinearity
        for (_, mut a) in p.arrays_mut() {
            a.mapv_inplace(|x| x * 20.0);
        }
        (cfg, p)
    }

    fn loss_of(cfg: &ModelConfig, p: &ModelParams, ids: &[TokenId], targets: &[(usize, TokenId)]) -> f64 {
        let tr = forward(cfg, p, ids, None, None);
        nll_grad(tr.logits.as_ref().unwrap(), targets).0
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (cfg, p) = small();
        let ids = [1, 4, 5, 2, 7];
        let targets = [(1, 5), (2, 2), (3, 7), (4, 3)];
        let tr = forward(&cfg, &p, &ids, None, None);
        let (_, d) = nll_grad(tr.logits.as_ref().unwrap(), &targets);
        let mut g = ModelParams::zeros(&cfg);
        backward(&cfg, &p, &ids, &tr, None, &d, Some(&mut g));

        let grads: Vec<Vec<f64>> = g.arrays().iter().map(|(_, a)| a.iter().copied().collect()).collect();
        let h = 1e-6;
        for (ai, grad) in grads.iter().enumerate() {
            let len = grad.len();
            for &ei in &[0, len / 2, len - 1] {
                let mut plus = p.clone();
                let mut minus = p.clone();
                *plus.arrays_mut()[ai].1.iter_mut().nth(ei).unwrap() += h;
                *minus.arrays_mut()[ai].1.iter_mut().nth(ei).unwrap() -= h;
                let fd = (loss_of(&cfg, &plus, &ids, &targets) - loss_of(&cfg, &minus, &ids, &targets)) / (2.0 * h);
                let an = grad[ei];
                let tol = 1e-5 * fd.abs().max(an.abs()) + 1e-7;
                assert!((fd - an).abs() < tol, "array {} elem {ei}: fd {fd} analytic {an}", p.arrays()[ai].0);
            }
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let (cfg, p) = small();
        let tr = forward(&cfg, &p, &[1, 3, 3, 8], None, None);
        for row in tr.log_probs().rows() {
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-12);
        }
    }

    #[test]
    fn early_stop_matches_full_pass() {
        let (cfg, p) = small();
        let ids = [1, 6, 2];
        let full = forward(&cfg, &p, &ids, None, None);
        let part = forward(&cfg, &p, &ids, None, Some(0));
        assert!(part.logits.is_none());
        assert_eq!(part.layers.len(), 1);
        assert_eq!(part.layers[0].key, full.layers[0].key);
    }
}
