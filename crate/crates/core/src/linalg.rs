//! Small dense and tridiagonal solvers for SPD systems.

use ndarray::{Array2, ArrayViewMut1};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if d.is_nan() || d <= 0.0 || d.is_infinite() {
                return Err(Error::SingularSystem { pivot: j });
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, mut b: ArrayViewMut1<'_, f64>) {
        let n = self.l.nrows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
    }
}

/// Thomas factorization of a symmetric tridiagonal SPD matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples `i` and `i + 1`).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    off: Vec<f64>,
    /// Modified diagonal after forward elimination.
    pivots: Vec<f64>,
}

impl Tridiagonal {
    pub fn factor(diag: &[f64], off: &[f64]) -> Result<Self> {
        let n = diag.len();
        debug_assert_eq!(off.len(), n.saturating_sub(1));
        let mut pivots = Vec::with_capacity(n);
        for i in 0..n {
            let p = if i == 0 {
                diag[0]
            } else {
                diag[i] - off[i - 1] * off[i - 1] / pivots[i - 1]
            };
            if p.is_nan() || p <= 0.0 || p.is_infinite() {
                return Err(Error::SingularSystem { pivot: i });
            }
            pivots.push(p);
        }
        Ok(Self {
            off: off.to_vec(),
            pivots,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.pivots.len();
        for i in 1..n {
            x[i] -= self.off[i - 1] / self.pivots[i - 1] * x[i - 1];
        }
        for i in (0..n).rev() {
            let carry = if i + 1 < n { self.off[i] * x[i + 1] } else { 0.0 };
            x[i] = (x[i] - carry) / self.pivots[i];
        }
    }
}
