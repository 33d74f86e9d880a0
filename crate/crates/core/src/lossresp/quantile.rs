use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Pinball loss `(τ − 𝟙{ε<0})·ε` for `ε = y − q̂`, minimized by the τ-quantile.
#[inline]
pub fn pinball_loss<T: Scalar>(eps: T, tau: T) -> T {
    let ind = if eps < T::zero() { T::one() } else { T::zero() };
    (tau - ind) * eps
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn logit<T: Scalar>(tau: T) -> T {
    (tau / (T::one() - tau)).ln()
}

/// Gradient (w.r.t. the model output) and Hessian of the logistic-smoothed
/// pinball loss at residual `ε = y − q̂`.
///
/// With `s = logit(τ)`, `z = ε − s` and `F = σ(z)`: `g = 1 − τ − F`,
/// `h = F(1 − F)`. Both vanish-free forms are evaluated through `σ(−z)` so
/// neither tail cancels.
pub fn smoothed_quantile_grad_hess<T: Scalar>(residual: T, tau: T) -> (T, T) {
    let z = residual - logit(tau);
    let upper = sigmoid(-z);
    let lower = sigmoid(z);
    (upper - tau, lower * upper)
}

/// The smoothed loss itself, `softplus(ε − s) − (1 − τ)ε`, shifted so that
/// its value at `ε = 0` is zero. Its derivative in `ε` is `−g`.
pub fn smoothed_quantile_loss<T: Scalar>(residual: T, tau: T) -> T {
    let s = logit(tau);
    softplus(residual - s) - (T::one() - tau) * residual - softplus(-s)
}

/// Per-row gradients and Hessians of the linear-quadratic quantile loss for
/// one leaf and one τ.
#[derive(Clone, Debug, PartialEq)]
pub struct LinQuadGradients<T> {
    pub g: Vec<T>,
    pub h: Vec<T>,
    /// `true` when one side of the residual sample was empty and the smoothed
    /// loss was used instead.
    pub fallback: bool,
}

/// Linear-quadratic quantile loss on the residuals `ε` of one leaf:
///
/// ```text
/// l(ε) = ((τ−1)ε + kε²/(2|ε̄ₗ|))·𝟙{ε<0} + (τε + kε²/(2|ε̄ᵣ|))·𝟙{ε≥0}
/// ```
///
/// where `ε̄ₗ`, `ε̄ᵣ` are the sums of the negative and non-negative residuals.
/// Returned gradients are with respect to the model output (`−dl/dε`);
/// Hessians are `k/|ε̄ₗ|` or `k/|ε̄ᵣ|`. If either sum is zero the smoothed
/// loss is used for the whole sample.
pub fn linquad_quantile_grad_hess<T: Scalar>(residuals: &[T], tau: T, k: T) -> LinQuadGradients<T> {
    let mut sum_l = T::zero();
    let mut sum_r = T::zero();
    for &e in residuals {
        if e < T::zero() {
            sum_l -= e;
        } else {
            sum_r += e;
        }
    }
    if !(sum_l > T::zero() && sum_r > T::zero()) {
        log::debug!(
            "linear-quadratic quantile loss: one-sided leaf of {} rows, falling back to smoothed loss",
            residuals.len()
        );
        let (g, h) = residuals
            .iter()
            .map(|&e| smoothed_quantile_grad_hess(e, tau))
            .unzip();
        return LinQuadGradients { g, h, fallback: true };
    }
    let h_l = k / sum_l;
    let h_r = k / sum_r;
    let (g, h) = residuals
        .iter()
        .map(|&e| {
            if e < T::zero() {
                (-((tau - T::one()) + e * h_l), h_l)
            } else {
                (-(tau + e * h_r), h_r)
            }
        })
        .unzip();
    LinQuadGradients { g, h, fallback: false }
}

/// Empirical quantile of an ascending sample with linear interpolation
/// between order statistics (position `(n−1)·p`).
pub fn empirical_quantile<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    assert!(n > 0, "empirical_quantile of an empty sample");
    if n == 1 {
        return sorted[0];
    }
    let pos = T::from_usize_lossy(n - 1) * p.max(T::zero()).min(T::one());
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize_lossy(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Exact pinball minimizers for a leaf: coordinate `(t, τᵢ)` is the empirical
/// `τᵢ`-quantile of that coordinate's residual column. Values are then sorted
/// along τ within each target so the leaf never crosses its own quantiles.
///
/// `residuals` is `rows × (n_t·n_q)` in target-major order.
pub fn refit_quantile_leaf<T: Scalar>(residuals: &Matrix<T>, taus: &[T]) -> Result<Vec<T>> {
    let n_q = taus.len();
    if residuals.rows() == 0 {
        return Err(invalid("residuals", "cannot refit an empty leaf"));
    }
    if n_q == 0 || !residuals.cols().is_multiple_of(n_q) {
        return Err(invalid(
            "residuals",
            format!("{} columns is not a multiple of {n_q} quantiles", residuals.cols()),
        ));
    }
    let n_t = residuals.cols() / n_q;
    let mut out = Vec::with_capacity(residuals.cols());
    let mut col = Vec::with_capacity(residuals.rows());
    for t in 0..n_t {
        let start = out.len();
        for (q, &tau) in taus.iter().enumerate() {
            col.clear();
            col.extend((0..residuals.rows()).map(|i| residuals[(i, t * n_q + q)]));
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            out.push(empirical_quantile(&col, tau));
        }
        out[start..].sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    }
    Ok(out)
}

/// `n` equispaced levels from `lo` to `hi` inclusive.
pub fn equispaced_taus<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_usize_lossy(n - 1);
            (0..n).map(|i| lo + step * T::from_usize_lossy(i)).collect()
        }
    }
}
