use super::{dot, Matrix};
use crate::error::Result;
use crate::Scalar;

/// Default relative cutoff for [`pinv`].
pub const DEFAULT_RCOND: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U diag(σ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

/// One-sided (Hestenes) Jacobi SVD. Works on `Aᵀ` internally when `A` is wide.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    a.ensure_finite("svd input")?;
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose());
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    Ok(svd_tall(a))
}

fn svd_tall<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    let (m, n) = a.shape();
    // Work column-major: cols[j] is the j-th column of the rotated A.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        sigma[y]
            .partial_cmp(&sigma[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let u = Matrix::from_fn(m, n, |r, c| {
        let k = order[c];
        if sigma[k] > T::zero() {
            cols[k][r] / sigma[k]
        } else {
            T::zero()
        }
    });
    let vm = Matrix::from_fn(n, n, |r, c| v[order[c]][r]);
    Svd {
        u,
        sigma: order.iter().map(|&k| sigma[k]).collect(),
        v: vm,
    }
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], i: usize, j: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(j);
    let ci = &mut left[i];
    let cj = &mut right[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Moore–Penrose pseudo-inverse. Singular values below `rcond · σ_max` are
/// treated as zero.
pub fn pinv<T: Scalar>(a: &Matrix<T>, rcond: T) -> Result<Matrix<T>> {
    let Svd { u, sigma, v } = svd(a)?;
    let smax = sigma.iter().fold(T::zero(), |m, &s| if s > m { s } else { m });
    let cutoff = rcond * smax;
    let inv: Vec<T> = sigma
        .iter()
        .map(|&s| if s > cutoff && s > T::zero() { T::one() / s } else { T::zero() })
        .collect();
    // A⁺ = V diag(1/σ) Uᵀ
    let (rows, cols) = (v.rows(), u.rows());
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        inv.iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, &d)| acc + v[(i, k)] * d * u[(j, k)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_diagonal() {
        let p = pinv(&Matrix::from_diag(&[2.0, 0.0]), 1e-10).unwrap();
        assert_eq!(p, Matrix::from_diag(&[0.5, 0.0]));
    }

    #[test]
    fn identity_is_its_own_pseudo_inverse() {
        let p = pinv(&Matrix::<f64>::identity(3), DEFAULT_RCOND).unwrap();
        assert!(p.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn wide_matrix_reconstructs() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.5]]).unwrap();
        let s = svd(&a).unwrap();
        let recon = Matrix::from_fn(2, 3, |i, j| {
            (0..s.sigma.len()).fold(0.0, |acc, k| acc + s.u[(i, k)] * s.sigma[k] * s.v[(j, k)])
        });
        assert!(recon.sub(&a).unwrap().max_abs() < 1e-12);
    }
}
