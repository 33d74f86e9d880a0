//! Loss/response pairs: per-row gradients in parameter space, additive leaf
//! statistics, closed-form optimal leaf parameters and leaf losses, and the
//! exact losses used by the stopping rule.
//!
//! Sign convention: for squared loss the target-space gradient is `g = −ε`
//! with `ε = y − F`, and the optimal leaf parameter is
//! `w* = −(Λ + H̃)⁻¹ G̃`, so the unpenalized constant leaf is the mean
//! residual. The optimal leaf loss is `−½ G̃ᵀ(Λ + H̃)⁻¹ G̃`.

mod quantile;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, MbtError, Result};
use crate::linalg::Matrix;
use crate::Scalar;

pub use quantile::{
    empirical_quantile, equispaced_taus, linquad_quantile_grad_hess, pinball_loss,
    refit_quantile_leaf, smoothed_quantile_grad_hess, smoothed_quantile_loss, LinQuadGradients,
};
pub use solver::{LeafHessian, LeafSolution, LeafSolver, LeafStats, RowGradients, RowHessian};

/// The supported loss/response combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared loss, constant response `r = w`, penalty `λI`.
    L2Constant,
    /// Squared loss, constant response, penalty `λDᵀD` on the second difference.
    L2Smooth,
    /// Squared loss, Fourier response `r = Pw`.
    L2Fourier,
    /// Squared loss, summation response `r = Sw`.
    L2Hierarchical,
    /// Squared loss, linear response `r = x_lrᵀ W`.
    L2Linear,
    /// Logistic-smoothed pinball loss, constant response per (target, τ).
    QuantileSmoothed,
    /// Linear-quadratic pinball loss, constant response per (target, τ).
    QuantileLinQuad,
}

impl LossKind {
    pub fn is_quantile(self) -> bool {
        matches!(self, Self::QuantileSmoothed | Self::QuantileLinQuad)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::L2Constant => "l2_constant",
            Self::L2Smooth => "l2_smooth",
            Self::L2Fourier => "l2_fourier",
            Self::L2Hierarchical => "l2_hierarchical",
            Self::L2Linear => "l2_linear",
            Self::QuantileSmoothed => "quantile_smoothed",
            Self::QuantileLinQuad => "quantile_linquad",
        }
    }

    pub const ALL: [LossKind; 7] = [
        Self::L2Constant,
        Self::L2Smooth,
        Self::L2Fourier,
        Self::L2Hierarchical,
        Self::L2Linear,
        Self::QuantileSmoothed,
        Self::QuantileLinQuad,
    ];
}

/// A loss/response pair with its parameters.
///
/// Only the matrices required by `kind` may be present: `difference` (D)
/// for [`LossKind::L2Smooth`], `fourier` (P) for [`LossKind::L2Fourier`],
/// `summation` (S) for [`LossKind::L2Hierarchical`], and `taus` for the
/// quantile kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct LossResponseSpec<T> {
    pub kind: LossKind,
    /// Scalar quadratic punishment λ.
    pub lambda: T,
    #[serde(default)]
    pub difference: Option<Matrix<T>>,
    #[serde(default)]
    pub fourier: Option<Matrix<T>>,
    #[serde(default)]
    pub summation: Option<Matrix<T>>,
    #[serde(default)]
    pub taus: Option<Vec<T>>,
    /// Curvature constant of the linear-quadratic quantile loss.
    pub k_coef: T,
    /// Replace quantile leaf values by exact empirical quantiles after the
    /// structure is fitted.
    #[serde(default)]
    pub refit: bool,
}

impl<T: Scalar> LossResponseSpec<T> {
    fn base(kind: LossKind, lambda: T) -> Self {
        Self {
            kind,
            lambda,
            difference: None,
            fourier: None,
            summation: None,
            taus: None,
            k_coef: T::one(),
            refit: false,
        }
    }

    pub fn l2_constant(lambda: T) -> Self {
        Self::base(LossKind::L2Constant, lambda)
    }

    pub fn l2_smooth(n_t: usize, lambda: T) -> Result<Self> {
        Ok(Self {
            difference: Some(second_difference_matrix(n_t)?),
            ..Self::base(LossKind::L2Smooth, lambda)
        })
    }

    pub fn l2_fourier(n_t: usize, wavenumbers: &[usize], lambda: T) -> Result<Self> {
        Ok(Self {
            fourier: Some(fourier_basis(n_t, wavenumbers)?),
            ..Self::base(LossKind::L2Fourier, lambda)
        })
    }

    pub fn l2_hierarchical(summation: Matrix<T>, lambda: T) -> Self {
        Self {
            summation: Some(summation),
            ..Self::base(LossKind::L2Hierarchical, lambda)
        }
    }

    pub fn l2_linear(lambda: T) -> Self {
        Self::base(LossKind::L2Linear, lambda)
    }

    pub fn quantile_smoothed(taus: Vec<T>, lambda: T, refit: bool) -> Self {
        Self {
            taus: Some(taus),
            refit,
            ..Self::base(LossKind::QuantileSmoothed, lambda)
        }
    }

    /// The curvature per row is `k/|ε̄|` with `ε̄` a leaf *sum*, so the leaf
    /// Hessian does not grow with the leaf size while the gradient does;
    /// `k` should be of the order of the typical leaf size.
    pub fn quantile_linquad(taus: Vec<T>, k_coef: T, lambda: T, refit: bool) -> Self {
        Self {
            taus: Some(taus),
            k_coef,
            refit,
            ..Self::base(LossKind::QuantileLinQuad, lambda)
        }
    }

    /// Checks the presence rules, τ ordering and scalar ranges.
    pub fn validate(&self) -> Result<()> {
        use LossKind::*;
        let need = |present: bool, wanted: bool, name: &str| -> Result<()> {
            match (present, wanted) {
                (true, false) => Err(MbtError::IncompatibleSpec(format!(
                    "`{name}` must not be set for kind {}",
                    self.kind.name()
                ))),
                (false, true) => Err(MbtError::IncompatibleSpec(format!(
                    "kind {} requires `{name}`",
                    self.kind.name()
                ))),
                _ => Ok(()),
            }
        };
        need(self.difference.is_some(), self.kind == L2Smooth, "difference")?;
        need(self.fourier.is_some(), self.kind == L2Fourier, "fourier")?;
        need(self.summation.is_some(), self.kind == L2Hierarchical, "summation")?;
        need(self.taus.is_some(), self.kind.is_quantile(), "taus")?;

        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(invalid("lambda", "must be finite and non-negative"));
        }
        if !(self.k_coef > T::zero()) || !self.k_coef.is_finite() {
            return Err(invalid("k_coef", "must be finite and positive"));
        }
        if self.refit && !self.kind.is_quantile() {
            return Err(MbtError::IncompatibleSpec(
                "leaf refitting applies to quantile kinds only".into(),
            ));
        }
        if let Some(taus) = &self.taus {
            if taus.is_empty() {
                return Err(invalid("taus", "must be non-empty"));
            }
            for (i, &t) in taus.iter().enumerate() {
                if !(t > T::zero() && t < T::one()) {
                    return Err(invalid("taus", format!("τ[{i}] = {t} outside (0, 1)")));
                }
                if i > 0 && !(t > taus[i - 1]) {
                    return Err(invalid("taus", "must be strictly increasing"));
                }
            }
        }
        if let Some(d) = &self.difference {
            d.ensure_finite("difference matrix")?;
            if d.cols() < 3 || d.rows() + 2 != d.cols() {
                return Err(mismatch(
                    "difference matrix",
                    "(n_t−2)×n_t",
                    format!("{:?}", d.shape()),
                ));
            }
        }
        for (name, m) in [("fourier", &self.fourier), ("summation", &self.summation)] {
            if let Some(m) = m {
                m.ensure_finite(name)?;
                if m.rows() == 0 || m.cols() == 0 {
                    return Err(invalid(name, "must be non-empty"));
                }
            }
        }
        Ok(())
    }

    pub fn n_quantiles(&self) -> usize {
        self.taus.as_ref().map_or(1, Vec::len)
    }

    /// Target dimension the spec's matrices impose, if any.
    pub fn implied_targets(&self) -> Option<usize> {
        self.difference
            .as_ref()
            .map(Matrix::cols)
            .or_else(|| self.fourier.as_ref().map(Matrix::rows))
            .or_else(|| self.summation.as_ref().map(Matrix::rows))
    }

    /// Width of a prediction row for `n_t` targets.
    pub fn output_dim(&self, n_t: usize) -> usize {
        n_t * self.n_quantiles()
    }

    /// Dimension of the leaf parameter vector.
    pub fn param_dim(&self, n_t: usize, n_p: usize) -> usize {
        match self.kind {
            LossKind::L2Fourier => self.fourier.as_ref().map_or(0, Matrix::cols),
            LossKind::L2Hierarchical => self.summation.as_ref().map_or(0, Matrix::cols),
            LossKind::L2Linear => n_p * n_t,
            _ => self.output_dim(n_t),
        }
    }

    /// Quadratic punishment matrix Λ as materialized for this kind.
    pub fn penalty_matrix(&self, n_t: usize, n_p: usize) -> Result<Matrix<T>> {
        match self.kind {
            LossKind::L2Smooth => {
                let d = self.difference.as_ref().expect("validated");
                Ok(d.t_matmul(d)?.scale(self.lambda))
            }
            _ => Ok(Matrix::identity(self.param_dim(n_t, n_p)).scale(self.lambda)),
        }
    }

    /// Response map used at prediction time.
    pub fn response(&self, n_t: usize, n_p: usize) -> Response<T> {
        match self.kind {
            LossKind::L2Fourier => Response::Basis(self.fourier.clone().expect("validated")),
            LossKind::L2Hierarchical => Response::Basis(self.summation.clone().expect("validated")),
            LossKind::L2Linear => Response::Linear { n_p, n_t },
            _ => Response::Identity {
                dim: self.output_dim(n_t),
            },
        }
    }

    /// Checks the spec against the dataset's target and linear-feature widths.
    pub fn check_data(&self, n_t: usize, n_p: Option<usize>) -> Result<()> {
        self.validate()?;
        if n_t == 0 {
            return Err(invalid("targets", "need at least one target column"));
        }
        if let Some(imp) = self.implied_targets() {
            if imp != n_t {
                return Err(MbtError::IncompatibleSpec(format!(
                    "kind {} expects {imp} targets, dataset has {n_t}",
                    self.kind.name()
                )));
            }
        }
        match (self.kind, n_p) {
            (LossKind::L2Linear, None) => Err(MbtError::IncompatibleSpec(
                "kind l2_linear requires linear-response features x_lr".into(),
            )),
            (LossKind::L2Linear, Some(0)) => Err(MbtError::IncompatibleSpec(
                "kind l2_linear requires at least one x_lr column".into(),
            )),
            (k, Some(_)) if k != LossKind::L2Linear => Err(MbtError::IncompatibleSpec(format!(
                "x_lr supplied but kind {} does not use it",
                k.name()
            ))),
            _ => Ok(()),
        }
    }
}

/// Leaf response map `r(w)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Response<T> {
    /// `r = w`.
    Identity { dim: usize },
    /// `r = B·w` for a fixed basis (Fourier P or summation S).
    Basis(Matrix<T>),
    /// `r = x_lrᵀ W`, with `W` stored row-major as `n_p × n_t`.
    Linear { n_p: usize, n_t: usize },
}

impl<T: Scalar> Response<T> {
    pub fn output_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Basis(b) => b.rows(),
            Self::Linear { n_t, .. } => *n_t,
        }
    }

    /// Adds `scale · r(w)` into `out`.
    pub fn apply_into(&self, w: &[T], x_lr: Option<&[T]>, scale: T, out: &mut [T]) -> Result<()> {
        match self {
            Self::Identity { .. } => {
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o += scale * wi;
                }
            }
            Self::Basis(b) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += scale * crate::linalg::dot(b.row(i), w);
                }
            }
            Self::Linear { n_p, n_t } => {
                let x = x_lr.ok_or_else(|| {
                    MbtError::IncompatibleSpec("linear response needs an x_lr row".into())
                })?;
                if x.len() != *n_p {
                    return Err(mismatch("x_lr row", n_p, x.len()));
                }
                for (p, &xp) in x.iter().enumerate() {
                    if xp == T::zero() {
                        continue;
                    }
                    for (t, o) in out.iter_mut().enumerate().take(*n_t) {
                        *o += scale * xp * w[p * n_t + t];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Second-order difference matrix with rows `(1, −2, 1)`.
pub fn second_difference_matrix<T: Scalar>(n_t: usize) -> Result<Matrix<T>> {
    if n_t < 3 {
        return Err(invalid("n_t", format!("second difference needs n_t ≥ 3, got {n_t}")));
    }
    let mut d = Matrix::zeros(n_t - 2, n_t);
    for i in 0..n_t - 2 {
        d[(i, i)] = T::one();
        d[(i, i + 1)] = T::lit(-2.0);
        d[(i, i + 2)] = T::one();
    }
    Ok(d)
}

/// Fourier basis with a cosine and a sine column per wavenumber, evaluated at
/// `t = 1..n_t` and normalized to unit length, so `PᵀP = I`.
pub fn fourier_basis<T: Scalar>(n_t: usize, wavenumbers: &[usize]) -> Result<Matrix<T>> {
    if wavenumbers.is_empty() {
        return Err(invalid("wavenumbers", "must be non-empty"));
    }
    let k_max = n_t.saturating_sub(1) / 2;
    let mut seen = std::collections::BTreeSet::new();
    for &k in wavenumbers {
        if k == 0 || k > k_max {
            return Err(invalid(
                "wavenumbers",
                format!("wavenumber {k} outside [1, {k_max}] for n_t = {n_t} (aliased or constant)"),
            ));
        }
        if !seen.insert(k) {
            return Err(invalid("wavenumbers", format!("duplicate wavenumber {k}")));
        }
    }
    let n_k = wavenumbers.len();
    let mut p = Matrix::zeros(n_t, 2 * n_k);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (c, &k) in wavenumbers.iter().enumerate() {
        let mut cos_col = Vec::with_capacity(n_t);
        let mut sin_col = Vec::with_capacity(n_t);
        for t in 1..=n_t {
            let arg = k as f64 * two_pi * t as f64 / n_t as f64;
            cos_col.push(arg.cos());
            sin_col.push(arg.sin());
        }
        let cn = cos_col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sn = sin_col.iter().map(|x| x * x).sum::<f64>().sqrt();
        for t in 0..n_t {
            p[(t, 2 * c)] = T::lit(cos_col[t] / cn);
            p[(t, 2 * c + 1)] = T::lit(sin_col[t] / sn);
        }
    }
    Ok(p)
}

/// Per-row parameter-space gradients for squared loss: `g̃ᵢ = −Bᵀεᵢ`, with
/// `B = I` when `basis` is `None`. The per-row Hessian is the constant `BᵀB`.
pub fn grad_hess_l2<T: Scalar>(residual: &Matrix<T>, basis: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    match basis {
        None => Ok(residual.scale(-T::one())),
        Some(b) => {
            if b.rows() != residual.cols() {
                return Err(mismatch("grad_hess_l2 basis rows", residual.cols(), b.rows()));
            }
            Ok(residual.matmul(b)?.scale(-T::one()))
        }
    }
}

/// Exact training loss plus the leaf-count penalty `γ·T`.
///
/// Squared kinds: `½ Σ‖y − ŷ‖² / N`. Quantile kinds: pinball loss averaged
/// over rows, targets and τ, with `ŷ` laid out target-major
/// (column `t·n_q + q`).
pub fn exact_loss<T: Scalar>(
    y: &Matrix<T>,
    yhat: &Matrix<T>,
    spec: &LossResponseSpec<T>,
    n_leaves_total: usize,
    gamma: T,
) -> Result<T> {
    let n_q = spec.n_quantiles();
    if yhat.rows() != y.rows() || yhat.cols() != y.cols() * n_q {
        return Err(mismatch(
            "exact_loss prediction shape",
            format!("{}×{}", y.rows(), y.cols() * n_q),
            format!("{}×{}", yhat.rows(), yhat.cols()),
        ));
    }
    let penalty = gamma * T::from_usize_lossy(n_leaves_total);
    if y.rows() == 0 {
        return Ok(penalty);
    }
    let n = T::from_usize_lossy(y.rows());
    let data = if let Some(taus) = spec.taus.as_ref().filter(|_| spec.kind.is_quantile()) {
        let mut total = T::zero();
        for i in 0..y.rows() {
            let yr = y.row(i);
            let qr = yhat.row(i);
            for (t, &yt) in yr.iter().enumerate() {
                for (q, &tau) in taus.iter().enumerate() {
                    total += pinball_loss(yt - qr[t * n_q + q], tau);
                }
            }
        }
        total / (n * T::from_usize_lossy(y.cols() * n_q))
    } else {
        let mut total = T::zero();
        for (a, b) in y.as_slice().iter().zip(yhat.as_slice()) {
            let e = *a - *b;
            total += e * e;
        }
        T::lit(0.5) * total / n
    };
    Ok(data + penalty)
}
