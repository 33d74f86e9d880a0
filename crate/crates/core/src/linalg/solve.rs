use super::Matrix;
use crate::error::{mismatch, MbtError, Result};
use crate::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a`. A pivot at or below `rtol · max diag` is reported as
    /// singular.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(mismatch("cholesky", "square matrix", format!("{:?}", a.shape())));
        }
        let n = a.rows();
        let scale = (0..n).fold(T::zero(), |m, i| {
            let d = a[(i, i)].abs();
            if d > m {
                d
            } else {
                m
            }
        });
        let tol = T::singular_rtol() * scale;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tol) {
                return Err(MbtError::Singular(format!(
                    "non-positive pivot {d} at column {j}"
                )));
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if b.len() != n {
            return Err(mismatch("cholesky solve", n, b.len()));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        Ok(y)
    }

    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if b.rows() != self.dim() {
            return Err(mismatch("cholesky solve", self.dim(), b.rows()));
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.column(j))?;
            for (i, xi) in x.into_iter().enumerate() {
                out[(i, j)] = xi;
            }
        }
        Ok(out)
    }
}
