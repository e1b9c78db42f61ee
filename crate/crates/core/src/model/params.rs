// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter storage. Linear maps are stored `[out, in]`, so the MLP output
//! matrix of a layer is exactly the `d_model x d_mlp` map `W_out` with
//! `value = W_out * key`.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    /// `[d_mlp, d_model]`
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    /// `[d_model, d_mlp]`; the matrix rewritten by editing.
    pub w_out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    pub unembed: Array2<f64>,
}

impl LayerParams {
    fn zeros(c: &ModelConfig) -> Self {
        let (d, m) = (c.d_model, c.d_mlp);
        Self {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            w_in: Array2::zeros((m, d)),
            b_in: Array1::zeros(m),
            w_out: Array2::zeros((d, m)),
        }
    }
}

impl ModelParams {
    pub fn zeros(c: &ModelConfig) -> Self {
        Self {
            tok_emb: Array2::zeros((c.vocab_size, c.d_model)),
            pos_emb: Array2::zeros((c.max_seq_len, c.d_model)),
            layers: (0..c.n_layers).map(|_| LayerParams::zeros(c)).collect(),
            lnf_gain: Array1::zeros(c.d_model),
            lnf_bias: Array1::zeros(c.d_model),
            unembed: Array2::zeros((c.vocab_size, c.d_model)),
        }
    }

    /// GPT-2 style initialization: N(0, 0.02) weights, unit LayerNorm gains,
    /// residual-branch outputs scaled by `1/sqrt(2 n_layers)`.
    pub fn init(c: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(c.rng_seed);
        let mut p = Self::zeros(c);
        let std = 0.02;
        let resid_std = std / (2.0 * c.n_layers as f64).sqrt();
        let mut fill = |a: &mut Array2<f64>, s: f64| a.mapv_inplace(|_| s * standard_normal(&mut rng));
        fill(&mut p.tok_emb, std);
        fill(&mut p.pos_emb, std);
        for l in &mut p.layers {
            fill(&mut l.w_q, std);
            fill(&mut l.w_k, std);
            fill(&mut l.w_v, std);
            fill(&mut l.w_o, resid_std);
            fill(&mut l.w_in, std);
            fill(&mut l.w_out, resid_std);
            l.ln1_gain.fill(1.0);
            l.ln2_gain.fill(1.0);
        }
        fill(&mut p.unembed, std);
        p.lnf_gain.fill(1.0);
        p
    }

    /// All arrays with their canonical names, in a fixed order.
    pub fn arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layers.{i}.{s}");
            out.push((n("ln1.gain"), l.ln1_gain.view().into_dyn()));
            out.push((n("ln1.bias"), l.ln1_bias.view().into_dyn()));
            out.push((n("attn.w_q"), l.w_q.view().into_dyn()));
            out.push((n("attn.w_k"), l.w_k.view().into_dyn()));
            out.push((n("attn.w_v"), l.w_v.view().into_dyn()));
            out.push((n("attn.w_o"), l.w_o.view().into_dyn()));
            out.push((n("ln2.gain"), l.ln2_gain.view().into_dyn()));
            out.push((n("ln2.bias"), l.ln2_bias.view().into_dyn()));
            out.push((n("mlp.w_in"), l.w_in.view().into_dyn()));
            out.push((n("mlp.b_in"), l.b_in.view().into_dyn()));
            out.push((n("mlp.w_out"), l.w_out.view().into_dyn()));
        }
        out.push(("ln_f.gain".to_string(), self.lnf_gain.view().into_dyn()));
        out.push(("ln_f.bias".to_string(), self.lnf_bias.view().into_dyn()));
        out.push(("unembed".to_string(), self.unembed.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`ModelParams::arrays`], same order.
    pub fn arrays_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let n = |s: &str| format!("layers.{i}.{s}");
            out.push((n("ln1.gain"), l.ln1_gain.view_mut().into_dyn()));
            out.push((n("ln1.bias"), l.ln1_bias.view_mut().into_dyn()));
            out.push((n("attn.w_q"), l.w_q.view_mut().into_dyn()));
            out.push((n("attn.w_k"), l.w_k.view_mut().into_dyn()));
            out.push((n("attn.w_v"), l.w_v.view_mut().into_dyn()));
            out.push((n("attn.w_o"), l.w_o.view_mut().into_dyn()));
            out.push((n("ln2.gain"), l.ln2_gain.view_mut().into_dyn()));
            out.push((n("ln2.bias"), l.ln2_bias.view_mut().into_dyn()));
            out.push((n("mlp.w_in"), l.w_in.view_mut().into_dyn()));
            out.push((n("mlp.b_in"), l.b_in.view_mut().into_dyn()));
            out.push((n("mlp.w_out"), l.w_out.view_mut().into_dyn()));
        }
        out.push(("ln_f.gain".to_string(), self.lnf_gain.view_mut().into_dyn()));
        out.push(("ln_f.bias".to_string(), self.lnf_bias.view_mut().into_dyn()));
        out.push(("unembed".to_string(), self.unembed.view_mut().into_dyn()));
        out
    }

    /// Overwrites parameters from named arrays; every array must be present
    /// exactly once with the shape implied by the config.
    pub fn from_named(c: &ModelConfig, named: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let mut p = Self::zeros(c);
        let mut lookup: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> = std::collections::BTreeMap::new();
        for (name, shape, data) in named {
            if lookup.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Shape(format!("duplicate array {name}")));
            }
        }
        for (name, mut view) in p.arrays_mut() {
            let (shape, data) = lookup.remove(&name).ok_or_else(|| Error::Shape(format!("missing array {name}")))?;
            if shape != view.shape() {
                return Err(Error::Shape(format!(
                    "array {name} has shape {shape:?}, config implies {:?}",
                    view.shape()
                )));
            }
            let src = ndarray::ArrayViewD::from_shape(IxDyn(&shape), &data)
                .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
            view.assign(&src);
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(Error::Shape(format!("unexpected array {extra}")));
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    /// `self += scale * other`, array by array.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.arrays().iter().map(|(_, a)| a.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }
}

/// Box-Muller standard normal sample.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
