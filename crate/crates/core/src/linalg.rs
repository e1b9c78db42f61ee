// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense symmetric positive-definite solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors `a`; returns `None` when a pivot is not strictly positive.
    pub fn factor(a: ArrayView2<'_, f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "square matrix required");
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Some(Self { l })
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.l.nrows();
        assert_eq!(b.nrows(), n);
        let mut x = b.to_owned();
        for mut col in x.columns_mut() {
            // forward: L y = b
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= self.l[[i, k]] * col[k];
                }
                col[i] = s / self.l[[i, i]];
            }
            // backward: L^T x = y
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in i + 1..n {
                    s -= self.l[[k, i]] * col[k];
                }
                col[i] = s / self.l[[i, i]];
            }
        }
        x
    }
}

/// Factors a symmetric matrix, retrying once with diagonal jitter
/// `jitter_rel * trace / n` when it is numerically singular.
pub fn factor_with_jitter(a: &Array2<f64>, jitter_rel: f64) -> Result<(Cholesky, f64)> {
    if let Some(c) = Cholesky::factor(a.view()) {
        return Ok((c, 0.0));
    }
    let n = a.nrows();
    let trace: f64 = a.diag().sum();
    let jitter = jitter_rel * (trace.abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut shifted = a.clone();
    shifted.diag_mut().mapv_inplace(|d| d + jitter);
    Cholesky::factor(shifted.view()).map(|c| (c, jitter)).ok_or_else(|| {
        Error::Singular(format!("matrix of size {n} is not positive definite even with jitter {jitter:e}"))
    })
}

/// Relative Frobenius distance `||a - b|| / max(||b||, tiny)`.
pub fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![[1.0, 0.0], [2.0, 1.0], [3.0, -1.0]];
        let x = Cholesky::factor(a.view()).unwrap().solve(b.view());
        assert!(rel_frobenius(&a.dot(&x), &b) < 1e-14);
    }

    #[test]
    fn rejects_indefinite_and_jitters_singular() {
        assert!(Cholesky::factor(array![[1.0, 2.0], [2.0, 1.0]].view()).is_none());
        let singular = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, jitter) = factor_with_jitter(&singular, 1e-8).unwrap();
        assert!(jitter > 0.0);
        assert!(factor_with_jitter(&array![[-1.0, 0.0], [0.0, -1.0]], 1e-8).is_err());
    }
}
