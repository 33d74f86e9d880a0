use std::cell::Cell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{mismatch, MbtError, Result};
use crate::Scalar;

const MAX_SWEEPS: usize = 100;

thread_local! {
    static DECOMPOSITIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of eigendecompositions performed on the calling thread so far.
///
/// Lets callers verify that a cached factorization is actually being reused.
pub fn eigen_decompositions_on_this_thread() -> usize {
    DECOMPOSITIONS.with(Cell::get)
}

/// Spectral factorization `A = Q diag(λ) Qᵀ` of a symmetric matrix, kept
/// around so that `(mA + nI)⁻¹` can be applied for many shifts `n` at the
/// cost of two matrix-vector products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EigenCache<T> {
    /// Orthogonal matrix with the eigenvectors as columns.
    pub q: Matrix<T>,
    /// Eigenvalues, ascending.
    pub eigvals: Vec<T>,
    /// Fingerprint of the decomposed matrix.
    pub fingerprint: u64,
}

/// Fingerprint of a matrix's shape and exact bit pattern.
pub fn matrix_fingerprint<T: Scalar>(a: &Matrix<T>) -> u64 {
    let mut h = DefaultHasher::new();
    a.shape().hash(&mut h);
    for &x in a.as_slice() {
        x.as_f64().to_bits().hash(&mut h);
    }
    h.finish()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Eigenvalues come back in
/// ascending order with matching eigenvector columns.
pub fn eigen_decompose_symmetric<T: Scalar>(a: &Matrix<T>) -> Result<EigenCache<T>> {
    if !a.is_square() {
        return Err(mismatch("eigen_decompose_symmetric", "square matrix", format!("{:?}", a.shape())));
    }
    a.ensure_finite("eigen_decompose_symmetric input")?;
    DECOMPOSITIONS.with(|c| c.set(c.get() + 1));

    let fingerprint = matrix_fingerprint(a);
    let n = a.rows();
    let mut m = a.symmetrized()?;
    let mut v = Matrix::<T>::identity(n);

    let total = m.frobenius_norm();
    let tiny = T::epsilon() * T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off <= tiny * total * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (apq + apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[(k, p)] = new_kp;
                    m[(p, k)] = new_kp;
                    m[(k, q)] = new_kq;
                    m[(q, k)] = new_kq;
                }
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigvals = order.iter().map(|&i| m[(i, i)]).collect();
    let q = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenCache {
        q,
        eigvals,
        fingerprint,
    })
}

impl<T: Scalar> EigenCache<T> {
    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn max_abs_eigval(&self) -> T {
        self.eigvals
            .iter()
            .fold(T::zero(), |m, &l| if l.abs() > m { l.abs() } else { m })
    }

    /// Diagonal of `L` in `(mA + nI)⁻¹ = Q L Qᵀ`, i.e. `1/(m·λᵢ + n)`.
    fn inverse_spectrum(&self, n: T, m: T) -> Result<Vec<T>> {
        if !(m > T::zero()) || n < T::zero() {
            return Err(MbtError::InvalidArgument {
                name: "shift".into(),
                reason: format!("need m > 0 and n ≥ 0, got m={m}, n={n}"),
            });
        }
        let tol = T::singular_rtol() * self.max_abs_eigval();
        self.eigvals
            .iter()
            .map(|&l| {
                let d = m * l + n;
                if d <= tol || d <= T::zero() {
                    Err(MbtError::Singular(format!(
                        "m·λ + n = {d} at eigenvalue {l} (m={m}, n={n})"
                    )))
                } else {
                    Ok(T::one() / d)
                }
            })
            .collect()
    }

    /// Reconstructs `Q diag(λ) Qᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let k = self.dim();
        Matrix::from_fn(k, k, |i, j| {
            (0..k).fold(T::zero(), |acc, c| {
                acc + self.q[(i, c)] * self.eigvals[c] * self.q[(j, c)]
            })
        })
    }
}

/// Applies `(mA + nI)⁻¹` to a vector using a cached factorization of `A`.
pub fn shifted_inverse_apply<T: Scalar>(
    cache: &EigenCache<T>,
    n: T,
    m: T,
    v: &[T],
) -> Result<Vec<T>> {
    if v.len() != cache.dim() {
        return Err(mismatch("shifted_inverse_apply", cache.dim(), v.len()));
    }
    let inv = cache.inverse_spectrum(n, m)?;
    let mut proj = cache.q.t_mul_vec(v)?;
    for (p, d) in proj.iter_mut().zip(&inv) {
        *p *= *d;
    }
    cache.q.mul_vec(&proj)
}

/// Column-wise variant of [`shifted_inverse_apply`] for a right-hand side
/// with several columns.
pub fn shifted_inverse_apply_matrix<T: Scalar>(
    cache: &EigenCache<T>,
    n: T,
    m: T,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    if v.rows() != cache.dim() {
        return Err(mismatch("shifted_inverse_apply_matrix", cache.dim(), v.rows()));
    }
    let inv = cache.inverse_spectrum(n, m)?;
    let mut proj = cache.q.t_matmul(v)?;
    for i in 0..proj.rows() {
        let d = inv[i];
        for x in proj.row_mut(i) {
            *x *= d;
        }
    }
    cache.q.matmul(&proj)
}
