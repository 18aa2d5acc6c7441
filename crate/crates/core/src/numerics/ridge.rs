//! Closed-form ridge regression through a Cholesky factorization of the
//! regularized Gram matrix.

use super::DenseMatrix;
use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky (square)",
                expected: n,
                actual: a.cols(),
            });
        }
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut pivot = a[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { column: j, pivot });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor_matrix(&self) -> &DenseMatrix {
        &self.l
    }

    /// Solves `A x = b` in place by forward then backward substitution.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.rows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve",
                expected: n,
                actual: b.rows(),
            });
        }
        let mut x = DenseMatrix::zeros(n, b.cols());
        let mut col = vec![0.0; n];
        for j in 0..b.cols() {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col);
            for i in 0..n {
                x[(i, j)] = col[i];
            }
        }
        Ok(x)
    }
}

/// `XᵀX + λI`.
pub fn regularized_gram(x: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let mut g = x.t_matmul(x).expect("XᵀX is always conformable");
    for i in 0..g.rows() {
        g[(i, i)] += lambda;
    }
    g
}

/// Minimizer of `‖X W − H‖²_F + λ‖W‖²_F`, i.e. `W = (XᵀX + λI)⁻¹ XᵀH`.
pub fn ridge_solve(x: &DenseMatrix, h: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge parameter must be positive, got {lambda}"
        )));
    }
    if x.rows() != h.rows() {
        return Err(Error::DimensionMismatch {
            context: "ridge_solve (sample count)",
            expected: x.rows(),
            actual: h.rows(),
        });
    }
    let gram = regularized_gram(x, lambda);
    let rhs = x.t_matmul(h)?;
    Cholesky::factor(&gram)?.solve(&rhs)
}

/// `‖(XᵀX + λI) W − XᵀH‖_F / ‖XᵀH‖_F`.
pub fn normal_equation_residual(
    x: &DenseMatrix,
    h: &DenseMatrix,
    lambda: f64,
    w: &DenseMatrix,
) -> Result<f64> {
    let rhs = x.t_matmul(h)?;
    let lhs = regularized_gram(x, lambda).matmul(w)?;
    let denom = rhs.frobenius_norm();
    let num = lhs.sub(&rhs)?.frobenius_norm();
    Ok(if denom == 0.0 { num } else { num / denom })
}

/// Ridge objective `Σᵢ ‖Xᵢ W − Hᵢ‖² + λ‖W‖²_F`.
pub fn ridge_objective(x: &DenseMatrix, h: &DenseMatrix, lambda: f64, w: &DenseMatrix) -> Result<f64> {
    let fit = x.matmul(w)?.sub(h)?.frobenius_norm();
    let norm = w.frobenius_norm();
    Ok(fit * fit + lambda * norm * norm)
}

/// Gradient of [`ridge_objective`] with respect to `W`: `2Xᵀ(XW − H) + 2λW`.
pub fn ridge_gradient(x: &DenseMatrix, h: &DenseMatrix, lambda: f64, w: &DenseMatrix) -> Result<DenseMatrix> {
    let resid = x.matmul(w)?.sub(h)?;
    let mut g = x.t_matmul(&resid)?;
    for (g, &w) in g.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *g = 2.0 * *g + 2.0 * lambda * w;
    }
    Ok(g)
}
