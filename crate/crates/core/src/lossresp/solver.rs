use super::{linquad_quantile_grad_hess, smoothed_quantile_grad_hess, LossKind, LossResponseSpec};
use crate::error::{mismatch, MbtError, Result};
use crate::linalg::{eigen_decompose_symmetric, shifted_inverse_apply, Cholesky, EigenCache, Matrix};
use crate::Scalar;

/// How a row contributes to the leaf Hessian.
#[derive(Clone, Debug, PartialEq)]
pub enum RowHessian<T> {
    /// Squared loss with a fixed basis: `H̃ = n_l·BᵀB`, only the count is kept.
    Count,
    /// Per-coordinate diagonal curvature (quantile kinds), `rows × n_r`.
    Diagonal(Matrix<T>),
    /// Linear response: each row adds `x xᵀ`; holds the `x_lr` rows.
    Gram(Matrix<T>),
}

/// Per-row gradients in parameter space together with the Hessian rule.
///
/// Row `p` of `g` belongs to whatever row set the caller is working with;
/// [`RowGradients::select`] narrows both parts consistently.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGradients<T> {
    pub g: Matrix<T>,
    pub hess: RowHessian<T>,
}

/// Accumulated Hessian of a leaf.
#[derive(Clone, Debug, PartialEq)]
pub enum LeafHessian<T> {
    Count,
    Diagonal(Vec<T>),
    Gram(Matrix<T>),
}

/// Sufficient statistics of a leaf: `G̃`, `H̃` and the row count.
///
/// Statistics are additive over any partition of the leaf's rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafStats<T> {
    pub g: Vec<T>,
    pub h: LeafHessian<T>,
    pub n: usize,
}

impl<T: Scalar> LeafStats<T> {
    pub fn merge(&mut self, other: &Self) {
        for (a, &b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
        match (&mut self.h, &other.h) {
            (LeafHessian::Diagonal(a), LeafHessian::Diagonal(b)) => {
                for (x, &y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            (LeafHessian::Gram(a), LeafHessian::Gram(b)) => {
                for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                    *x += y;
                }
            }
            _ => {}
        }
        self.n += other.n;
    }
}

impl<T: Scalar> RowGradients<T> {
    pub fn len(&self) -> usize {
        self.g.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.g.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            g: self.g.select_rows(idx),
            hess: match &self.hess {
                RowHessian::Count => RowHessian::Count,
                RowHessian::Diagonal(h) => RowHessian::Diagonal(h.select_rows(idx)),
                RowHessian::Gram(x) => RowHessian::Gram(x.select_rows(idx)),
            },
        }
    }

    pub fn empty_stats(&self) -> LeafStats<T> {
        LeafStats {
            g: vec![T::zero(); self.g.cols()],
            h: match &self.hess {
                RowHessian::Count => LeafHessian::Count,
                RowHessian::Diagonal(h) => LeafHessian::Diagonal(vec![T::zero(); h.cols()]),
                RowHessian::Gram(x) => LeafHessian::Gram(Matrix::zeros(x.cols(), x.cols())),
            },
            n: 0,
        }
    }

    #[inline]
    pub fn add_row(&self, stats: &mut LeafStats<T>, i: usize) {
        for (a, &b) in stats.g.iter_mut().zip(self.g.row(i)) {
            *a += b;
        }
        match (&mut stats.h, &self.hess) {
            (LeafHessian::Diagonal(a), RowHessian::Diagonal(h)) => {
                for (x, &y) in a.iter_mut().zip(h.row(i)) {
                    *x += y;
                }
            }
            (LeafHessian::Gram(a), RowHessian::Gram(xs)) => {
                let x = xs.row(i);
                let k = x.len();
                let data = a.as_mut_slice();
                for (p, &xp) in x.iter().enumerate() {
                    if xp == T::zero() {
                        continue;
                    }
                    for (q, &xq) in x.iter().enumerate() {
                        data[p * k + q] += xp * xq;
                    }
                }
            }
            _ => {}
        }
        stats.n += 1;
    }

    pub fn accumulate(&self, rows: impl IntoIterator<Item = usize>) -> LeafStats<T> {
        let mut s = self.empty_stats();
        for i in rows {
            self.add_row(&mut s, i);
        }
        s
    }

    pub fn total(&self) -> LeafStats<T> {
        self.accumulate(0..self.len())
    }
}

/// Optimal leaf parameters and the corresponding leaf loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafSolution<T> {
    pub w: Vec<T>,
    pub loss: T,
}

/// A loss/response spec prepared for repeated leaf solves.
///
/// For the smoothing, Fourier and hierarchical kinds the constant part of
/// `Λ + H̃` is eigendecomposed once here; every later leaf evaluation only
/// rescales the spectrum by the leaf's row count.
#[derive(Clone, Debug)]
pub struct LeafSolver<T> {
    spec: LossResponseSpec<T>,
    n_t: usize,
    n_p: usize,
    n_r: usize,
    basis: Option<Matrix<T>>,
    cache: Option<EigenCache<T>>,
}

impl<T: Scalar> LeafSolver<T> {
    /// Prepares the solver for `n_t` targets and `n_p` linear-response features.
    pub fn new(spec: &LossResponseSpec<T>, n_t: usize, n_p: usize) -> Result<Self> {
        spec.check_data(n_t, (spec.kind == LossKind::L2Linear).then_some(n_p))?;
        let basis = match spec.kind {
            LossKind::L2Fourier => spec.fourier.clone(),
            LossKind::L2Hierarchical => spec.summation.clone(),
            _ => None,
        };
        let cache = match spec.kind {
            // (λDᵀD + n_l I)⁻¹: A = λDᵀD, shift n_l.
            LossKind::L2Smooth => Some(eigen_decompose_symmetric(&spec.penalty_matrix(n_t, n_p)?)?),
            // (n_l BᵀB + λI)⁻¹: A = BᵀB, scale n_l, shift λ.
            LossKind::L2Fourier | LossKind::L2Hierarchical => {
                let b = basis.as_ref().expect("validated");
                Some(eigen_decompose_symmetric(&b.t_matmul(b)?)?)
            }
            _ => None,
        };
        Ok(Self {
            spec: spec.clone(),
            n_t,
            n_p,
            n_r: spec.param_dim(n_t, n_p),
            basis,
            cache,
        })
    }

    pub fn spec(&self) -> &LossResponseSpec<T> {
        &self.spec
    }

    pub fn param_dim(&self) -> usize {
        self.n_r
    }

    pub fn n_targets(&self) -> usize {
        self.n_t
    }

    pub fn eigen_cache(&self) -> Option<&EigenCache<T>> {
        self.cache.as_ref()
    }

    /// Per-row gradients for the current residuals `ε = y − F`.
    ///
    /// `residual` has one column per output coordinate (`n_t`, or `n_t·n_q`
    /// for quantile kinds). For the linear-quadratic loss the leaf sums are
    /// taken over exactly the rows passed in.
    pub fn row_gradients(&self, residual: &Matrix<T>, x_lr: Option<&Matrix<T>>) -> Result<RowGradients<T>> {
        let width = self.spec.output_dim(self.n_t);
        if residual.cols() != width {
            return Err(mismatch("residual columns", width, residual.cols()));
        }
        let rows = residual.rows();
        match self.spec.kind {
            LossKind::L2Constant | LossKind::L2Smooth => Ok(RowGradients {
                g: residual.scale(-T::one()),
                hess: RowHessian::Count,
            }),
            LossKind::L2Fourier | LossKind::L2Hierarchical => Ok(RowGradients {
                g: super::grad_hess_l2(residual, self.basis.as_ref())?,
                hess: RowHessian::Count,
            }),
            LossKind::L2Linear => {
                let x = x_lr.ok_or_else(|| {
                    MbtError::IncompatibleSpec("kind l2_linear requires x_lr".into())
                })?;
                if x.rows() != rows || x.cols() != self.n_p {
                    return Err(mismatch(
                        "x_lr shape",
                        format!("{rows}×{}", self.n_p),
                        format!("{}×{}", x.rows(), x.cols()),
                    ));
                }
                let (n_p, n_t) = (self.n_p, self.n_t);
                let mut g = Matrix::zeros(rows, n_p * n_t);
                for i in 0..rows {
                    let xi = x.row(i);
                    let ei = residual.row(i);
                    let gi = g.row_mut(i);
                    for p in 0..n_p {
                        for t in 0..n_t {
                            gi[p * n_t + t] = -xi[p] * ei[t];
                        }
                    }
                }
                Ok(RowGradients {
                    g,
                    hess: RowHessian::Gram(x.clone()),
                })
            }
            LossKind::QuantileSmoothed => {
                let taus = self.spec.taus.as_ref().expect("validated");
                let n_q = taus.len();
                let mut g = Matrix::zeros(rows, width);
                let mut h = Matrix::zeros(rows, width);
                for i in 0..rows {
                    for c in 0..width {
                        let (gi, hi) = smoothed_quantile_grad_hess(residual[(i, c)], taus[c % n_q]);
                        g[(i, c)] = gi;
                        h[(i, c)] = hi;
                    }
                }
                Ok(RowGradients {
                    g,
                    hess: RowHessian::Diagonal(h),
                })
            }
            LossKind::QuantileLinQuad => {
                let taus = self.spec.taus.as_ref().expect("validated");
                let n_q = taus.len();
                let mut g = Matrix::zeros(rows, width);
                let mut h = Matrix::zeros(rows, width);
                for c in 0..width {
                    let col = residual.column(c);
                    let lq = linquad_quantile_grad_hess(&col, taus[c % n_q], self.spec.k_coef);
                    for i in 0..rows {
                        g[(i, c)] = lq.g[i];
                        h[(i, c)] = lq.h[i];
                    }
                }
                Ok(RowGradients {
                    g,
                    hess: RowHessian::Diagonal(h),
                })
            }
        }
    }

    /// Optimal parameters `w* = −(Λ + H̃)⁻¹G̃` and loss `−½G̃ᵀ(Λ + H̃)⁻¹G̃`.
    pub fn solve(&self, stats: &LeafStats<T>) -> Result<LeafSolution<T>> {
        if stats.g.len() != self.n_r {
            return Err(mismatch("leaf gradient length", self.n_r, stats.g.len()));
        }
        if stats.n == 0 {
            return Err(MbtError::Singular("empty leaf".into()));
        }
        let lambda = self.spec.lambda;
        let n_l = T::from_usize_lossy(stats.n);
        let z: Vec<T> = match (self.spec.kind, &stats.h) {
            (LossKind::L2Constant, _) => {
                let d = lambda + n_l;
                stats.g.iter().map(|&g| g / d).collect()
            }
            (LossKind::L2Smooth, _) => {
                let cache = self.cache.as_ref().expect("prepared");
                shifted_inverse_apply(cache, n_l, T::one(), &stats.g)?
            }
            (LossKind::L2Fourier | LossKind::L2Hierarchical, _) => {
                let cache = self.cache.as_ref().expect("prepared");
                shifted_inverse_apply(cache, lambda, n_l, &stats.g)?
            }
            (LossKind::L2Linear, LeafHessian::Gram(gram)) => {
                let mut a = gram.clone();
                for p in 0..self.n_p {
                    a[(p, p)] += lambda;
                }
                let chol = Cholesky::new(&a)?;
                let gm = Matrix::from_vec(self.n_p, self.n_t, stats.g.clone())?;
                chol.solve(&gm)?.into_vec()
            }
            (k, LeafHessian::Diagonal(h)) if k.is_quantile() => {
                let scale = h.iter().fold(T::zero(), |m, &x| m.max(x.abs())) + lambda;
                let tol = T::singular_rtol() * scale;
                h.iter()
                    .zip(&stats.g)
                    .enumerate()
                    .map(|(j, (&hj, &gj))| {
                        let d = hj + lambda;
                        if d <= tol || d <= T::zero() {
                            Err(MbtError::Singular(format!(
                                "zero curvature λ + H = {d} at coordinate {j}"
                            )))
                        } else {
                            Ok(gj / d)
                        }
                    })
                    .collect::<Result<_>>()?
            }
            (k, _) => {
                return Err(MbtError::IncompatibleSpec(format!(
                    "leaf statistics do not match kind {}",
                    k.name()
                )))
            }
        };
        let quad = z.iter().zip(&stats.g).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        Ok(LeafSolution {
            w: z.into_iter().map(|x| -x).collect(),
            loss: -T::lit(0.5) * quad,
        })
    }

    pub fn optimal_leaf_response(&self, stats: &LeafStats<T>) -> Result<Vec<T>> {
        self.solve(stats).map(|s| s.w)
    }

    pub fn optimal_leaf_loss(&self, stats: &LeafStats<T>) -> Result<T> {
        self.solve(stats).map(|s| s.loss)
    }
}
