// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::factor_with_jitter;

/// Batched least-squares rewrite of an MLP output matrix:
/// `W = W0 + (V - W0 K) K^T (C + K K^T)^{-1}`.
///
/// Shapes: `w0` is `[d_model, d_mlp]`, `k` is `[d_mlp, n]`, `v` is
/// `[d_model, n]`, `c` is `[d_mlp, d_mlp]`. The inverse is never formed; the
/// system is solved through a Cholesky factor, with `jitter_rel * trace / d`
/// added to the diagonal if the factorization fails.
pub fn closed_form_update(
    w0: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    c: &Array2<f64>,
    jitter_rel: f64,
) -> Result<Array2<f64>> {
    let (d_model, d_mlp) = w0.dim();
    let n = k.ncols();
    if k.nrows() != d_mlp || v.dim() != (d_model, n) || c.dim() != (d_mlp, d_mlp) {
        return Err(Error::Shape(format!(
            "closed-form update: W0 {:?}, K {:?}, V {:?}, C {:?}",
            w0.dim(),
            k.dim(),
            v.dim(),
            c.dim()
        )));
    }
    if n == 0 {
        return Ok(w0.clone());
    }
    let residual = v - &w0.dot(k);
    if residual.iter().all(|&r| r == 0.0) {
        return Ok(w0.clone());
    }
    let a = c + &k.dot(&k.t());
    let (chol, jitter) = factor_with_jitter(&a, jitter_rel)?;
    if jitter > 0.0 {
        log::warn!("C + K K^T was singular; added jitter {jitter:e}");
    }
    // A is symmetric, so (R K^T A^{-1})^T = A^{-1} K R^T.
    let delta_t = chol.solve(k.dot(&residual.t()).view());
    let w = w0 + &delta_t.t();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("closed-form update produced non-finite weights".into()));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn empty_batch_returns_w0() {
        let w0 = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let w = closed_form_update(&w0, &Array2::zeros((3, 0)), &Array2::zeros((2, 0)), &Array2::eye(3), 1e-8).unwrap();
        assert_eq!(w, w0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let w0 = Array2::zeros((2, 3));
        let err = closed_form_update(&w0, &Array2::zeros((2, 1)), &Array2::zeros((2, 1)), &Array2::eye(3), 1e-8);
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
