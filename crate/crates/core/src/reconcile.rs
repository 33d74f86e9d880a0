//! Hierarchical reconciliation: summation matrices, bottom-up and GLS
//! projections, and boosted residual correction with an `S·w` response.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::boosting::{BoostConfig, BoostedModel};
use crate::dataset::{calendar_encoding, Dataset};
use crate::error::{invalid, mismatch, MbtError, Result};
use crate::linalg::{pinv, Cholesky, Matrix, DEFAULT_RCOND};
use crate::lossresp::LossResponseSpec;
use crate::Scalar;

/// Summation matrix `S` (`n_t × n_b`) with row labels. Upper rows come first
/// (top-down), then the bottom identity block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Hierarchy<T> {
    pub s: Matrix<T>,
    pub names: Vec<String>,
    /// Depth of each row's node, root = 0.
    pub levels: Vec<usize>,
}

impl<T: Scalar> Hierarchy<T> {
    pub fn n_series(&self) -> usize {
        self.s.rows()
    }

    pub fn n_bottom(&self) -> usize {
        self.s.cols()
    }

    pub fn n_upper(&self) -> usize {
        self.s.rows() - self.s.cols()
    }

    /// Columns of the bottom series within a full-width row.
    pub fn bottom_range(&self) -> std::ops::Range<usize> {
        self.n_upper()..self.n_series()
    }

    /// Hierarchy whose level `i` splits the `n_b` bottom series into
    /// `sizes[i]` equal contiguous groups: `S = [I_{sizes[i]} ⊗ 1ᵀ; …; I_{n_b}]`.
    pub fn from_levels(sizes: &[usize], n_b: usize) -> Result<Self> {
        if n_b == 0 {
            return Err(MbtError::Hierarchy("need at least one bottom series".into()));
        }
        let mut rows: Vec<Vec<T>> = Vec::new();
        let mut names = Vec::new();
        let mut levels = Vec::new();
        for (lvl, &k) in sizes.iter().enumerate() {
            if k == 0 || !n_b.is_multiple_of(k) || k >= n_b {
                return Err(MbtError::Hierarchy(format!(
                    "level {lvl} with {k} groups does not evenly aggregate {n_b} bottom series"
                )));
            }
            let width = n_b / k;
            for g in 0..k {
                rows.push((0..n_b).map(|j| if j / width == g { T::one() } else { T::zero() }).collect());
                names.push(format!("L{lvl}_{g}"));
                levels.push(lvl);
            }
        }
        for j in 0..n_b {
            rows.push((0..n_b).map(|c| if c == j { T::one() } else { T::zero() }).collect());
            names.push(format!("B{j}"));
            levels.push(sizes.len());
        }
        Ok(Self {
            s: Matrix::from_rows(&rows)?,
            names,
            levels,
        })
    }

    /// Checks the identity bottom block and that every upper row is a 0/1
    /// aggregate of at least one bottom series.
    pub fn validate(&self) -> Result<()> {
        let (n_t, n_b) = self.s.shape();
        if n_b == 0 || n_t <= n_b {
            return Err(MbtError::Hierarchy(format!("summation matrix {n_t}×{n_b} has no aggregates")));
        }
        if self.names.len() != n_t || self.levels.len() != n_t {
            return Err(MbtError::Hierarchy("labels do not match the summation matrix".into()));
        }
        for i in 0..n_t {
            let row = self.s.row(i);
            if row.iter().any(|&v| v != T::zero() && v != T::one()) {
                return Err(MbtError::Hierarchy(format!("row {i} is not 0/1")));
            }
            if row.iter().all(|&v| v == T::zero()) {
                return Err(MbtError::Hierarchy(format!("row {i} aggregates nothing")));
            }
        }
        for j in 0..n_b {
            let row = self.s.row(n_t - n_b + j);
            if row.iter().enumerate().any(|(c, &v)| (v == T::one()) != (c == j)) {
                return Err(MbtError::Hierarchy("bottom block is not the identity".into()));
            }
        }
        Ok(())
    }

    /// Largest `|ỹ_u − S_u·ỹ_b|` over all rows.
    pub fn consistency_error(&self, y: &Matrix<T>) -> Result<T> {
        if y.cols() != self.n_series() {
            return Err(mismatch("reconciled width", self.n_series(), y.cols()));
        }
        let b = self.bottom_range();
        let mut worst = T::zero();
        for i in 0..y.rows() {
            let row = y.row(i);
            let bottom = &row[b.clone()];
            for u in 0..self.n_upper() {
                let agg = crate::linalg::dot(self.s.row(u), bottom);
                worst = worst.max((row[u] - agg).abs());
            }
        }
        Ok(worst)
    }
}

/// Builds `S` from a parent → children map describing a rooted tree.
///
/// Upper rows are the internal nodes in breadth-first order from the root;
/// bottom columns are the leaves in depth-first (left-to-right) order.
pub fn build_summation_matrix<T: Scalar>(children: &BTreeMap<String, Vec<String>>) -> Result<Hierarchy<T>> {
    let mut parent: HashMap<&str, &str> = HashMap::new();
    for (p, cs) in children {
        for c in cs {
            if c == p {
                return Err(MbtError::Hierarchy(format!("`{p}` lists itself as a child")));
            }
            if let Some(prev) = parent.insert(c, p) {
                return Err(MbtError::Hierarchy(format!(
                    "`{c}` has two parents (`{prev}` and `{p}`)"
                )));
            }
        }
    }
    let roots: Vec<&str> = children
        .keys()
        .map(String::as_str)
        .filter(|k| !parent.contains_key(k))
        .collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(MbtError::Hierarchy("no root: the map contains a cycle".into())),
        many => {
            return Err(MbtError::Hierarchy(format!(
                "expected one root, found {}: {}",
                many.len(),
                many.join(", ")
            )))
        }
    };
    let kids = |n: &str| children.get(n).map_or(&[][..], Vec::as_slice);
    if kids(root).is_empty() {
        return Err(MbtError::Hierarchy(format!("root `{root}` has no children")));
    }

    // Depth-first leaf order, with cycle detection.
    let mut leaves: Vec<&str> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            return Err(MbtError::Hierarchy(format!("cycle through `{n}`")));
        }
        let cs = kids(n);
        if cs.is_empty() {
            leaves.push(n);
        }
        stack.extend(cs.iter().rev().map(String::as_str));
    }
    let all: HashSet<&str> = children
        .iter()
        .flat_map(|(p, cs)| std::iter::once(p.as_str()).chain(cs.iter().map(String::as_str)))
        .collect();
    if let Some(orphan) = all.iter().find(|n| !seen.contains(*n)) {
        return Err(MbtError::Hierarchy(format!("`{orphan}` is not reachable from `{root}`")));
    }

    let col: HashMap<&str, usize> = leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let n_b = leaves.len();
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut names = Vec::new();
    let mut levels = Vec::new();
    let mut queue = VecDeque::from([(root, 0usize)]);
    while let Some((n, depth)) = queue.pop_front() {
        let cs = kids(n);
        if cs.is_empty() {
            continue;
        }
        let mut row = vec![T::zero(); n_b];
        let mut sub = vec![n];
        while let Some(m) = sub.pop() {
            let mc = kids(m);
            if mc.is_empty() {
                row[col[m]] = T::one();
            }
            sub.extend(mc.iter().map(String::as_str));
        }
        rows.push(row);
        names.push(n.to_string());
        levels.push(depth);
        queue.extend(cs.iter().map(|c| (c.as_str(), depth + 1)));
    }
    let mut depth_of: HashMap<&str, usize> = HashMap::from([(root, 0)]);
    let mut order = vec![root];
    while let Some(n) = order.pop() {
        for c in kids(n) {
            depth_of.insert(c, depth_of[n] + 1);
            order.push(c);
        }
    }
    for (j, &l) in leaves.iter().enumerate() {
        rows.push((0..n_b).map(|c| if c == j { T::one() } else { T::zero() }).collect());
        names.push(l.to_string());
        levels.push(depth_of[l]);
    }
    let h = Hierarchy {
        s: Matrix::from_rows(&rows)?,
        names,
        levels,
    };
    h.validate()?;
    Ok(h)
}

/// Parses a hierarchy file: a JSON object mapping node names to child lists.
pub fn hierarchy_from_json<T: Scalar>(text: &str) -> Result<Hierarchy<T>> {
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| MbtError::Hierarchy(format!("bad hierarchy file: {e}")))?;
    build_summation_matrix(&map)
}

/// `ỹ = ŷ_b·Sᵀ`.
pub fn bottom_up<T: Scalar>(y_bottom: &Matrix<T>, h: &Hierarchy<T>) -> Result<Matrix<T>> {
    if y_bottom.cols() != h.n_bottom() {
        return Err(mismatch("bottom forecasts width", h.n_bottom(), y_bottom.cols()));
    }
    y_bottom.matmul(&h.s.transpose())
}

/// Generalized least squares reconciliation
/// `ỹᵀ = S(SᵀΩ†S)⁻¹SᵀΩ†ŷᵀ`, with `Ω†` the pseudo-inverse.
pub fn gls_reconcile<T: Scalar>(y_hat: &Matrix<T>, h: &Hierarchy<T>, omega: &Matrix<T>) -> Result<Matrix<T>> {
    let n_t = h.n_series();
    if y_hat.cols() != n_t {
        return Err(mismatch("forecast width", n_t, y_hat.cols()));
    }
    if omega.shape() != (n_t, n_t) {
        return Err(mismatch("Ω shape", format!("{n_t}×{n_t}"), format!("{:?}", omega.shape())));
    }
    let w = pinv(&omega.symmetrized()?, T::lit(DEFAULT_RCOND))?;
    let s = &h.s;
    let stw = s.t_matmul(&w)?; // SᵀΩ†, n_b × n_t
    let gram = stw.matmul(s)?.symmetrized()?;
    let chol = Cholesky::new(&gram)
        .map_err(|e| MbtError::Singular(format!("SᵀΩ†S is not invertible: {e}")))?;
    // Bottom coefficients b = (SᵀΩ†S)⁻¹SᵀΩ†ŷᵀ, then ỹ = S·b.
    let rhs = stw.matmul(&y_hat.transpose())?;
    let b = chol.solve(&rhs)?;
    bottom_up(&b.transpose(), h)
}

/// Error covariance estimators for [`gls_reconcile`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaEstimator {
    Identity,
    /// Diagonal of the sample error covariance.
    Diagonal,
    /// Full sample covariance plus a ridge `δI`, `δ = 1e−6·trace/n_t`.
    Full,
}

/// Estimates `Ω` from in-sample errors `y − ŷ` (`T × n_t`).
pub fn estimate_omega<T: Scalar>(errors: &Matrix<T>, est: OmegaEstimator) -> Result<Matrix<T>> {
    let (n, k) = errors.shape();
    if est == OmegaEstimator::Identity {
        return Ok(Matrix::identity(k));
    }
    if n < 2 {
        return Err(invalid("errors", "need at least two rows to estimate a covariance"));
    }
    let mean = errors.column_means();
    let centered = Matrix::from_fn(n, k, |i, j| errors[(i, j)] - mean[j]);
    let cov = centered.t_matmul(&centered)?.scale(T::one() / T::from_usize_lossy(n - 1));
    Ok(match est {
        OmegaEstimator::Diagonal => Matrix::from_diag(&(0..k).map(|i| cov[(i, i)]).collect::<Vec<_>>()),
        _ => {
            let trace = (0..k).fold(T::zero(), |a, i| a + cov[(i, i)]);
            let delta = T::lit(1e-6) * trace / T::from_usize_lossy(k);
            let mut c = cov.symmetrized()?;
            for i in 0..k {
                c[(i, i)] += delta;
            }
            c
        }
    })
}

/// Boosted residual correction on top of bottom-up reconciliation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReconcileModel<T> {
    pub hierarchy: Hierarchy<T>,
    pub model: BoostedModel<T>,
    pub calendar: bool,
}

/// Features `[ŷ_t, ε_{t−1}, weekday, hour]` for rows `start..T`.
fn reconcile_features<T: Scalar>(
    y_hat: &Matrix<T>,
    actuals: &Matrix<T>,
    timestamps: Option<&[NaiveDateTime]>,
    start: usize,
) -> Result<Matrix<T>> {
    let (n, k) = y_hat.shape();
    if actuals.shape() != (n, k) {
        return Err(mismatch(
            "actuals shape",
            format!("{n}×{k}"),
            format!("{:?}", actuals.shape()),
        ));
    }
    if start == 0 {
        return Err(invalid("start", "the first row has no prior error"));
    }
    if let Some(ts) = timestamps {
        if ts.len() != n {
            return Err(mismatch("timestamps", n, ts.len()));
        }
    }
    let width = 2 * k + if timestamps.is_some() { 2 } else { 0 };
    let rows = n.saturating_sub(start);
    let mut x = Matrix::zeros(rows, width);
    for r in 0..rows {
        let t = start + r;
        let xr = x.row_mut(r);
        xr[..k].copy_from_slice(y_hat.row(t));
        for j in 0..k {
            xr[k + j] = actuals[(t - 1, j)] - y_hat[(t - 1, j)];
        }
        if let Some(ts) = timestamps {
            let (wd, hr) = calendar_encoding(&ts[t]);
            xr[2 * k] = T::from_u32(wd).expect("small");
            xr[2 * k + 1] = T::from_u32(hr).expect("small");
        }
    }
    Ok(x)
}

/// Fits the residual-correction model on base forecasts `ŷ` and actuals `y`.
///
/// The target for row `t` is `y_t − S·ŷ_{b,t}`; the first row is dropped
/// since it has no prior error. `config.spec` is replaced by the
/// hierarchical kind with `S` and the configured λ.
pub fn mbt_reconcile_fit<T: Scalar>(
    y_hat: &Matrix<T>,
    actuals: &Matrix<T>,
    timestamps: Option<&[NaiveDateTime]>,
    h: &Hierarchy<T>,
    config: &BoostConfig<T>,
) -> Result<ReconcileModel<T>> {
    h.validate()?;
    if y_hat.rows() < 2 {
        return Err(invalid("forecasts", "need at least two rows"));
    }
    if y_hat.cols() != h.n_series() {
        return Err(mismatch("forecast width", h.n_series(), y_hat.cols()));
    }
    let x = reconcile_features(y_hat, actuals, timestamps, 1)?;
    let bu = bottom_up(&y_hat.select_cols(&h.bottom_range().collect::<Vec<_>>()), h)?;
    let idx: Vec<usize> = (1..y_hat.rows()).collect();
    let y = actuals.select_rows(&idx).sub(&bu.select_rows(&idx))?;
    let mut data = Dataset::new(x, y, None)?;
    data.feature_names = h
        .names
        .iter()
        .map(|n| format!("{n}_forecast"))
        .chain(h.names.iter().map(|n| format!("{n}_prev_error")))
        .chain(timestamps.map_or(Vec::new(), |_| vec!["weekday".into(), "hour".into()]))
        .collect();
    data.target_names = h.names.clone();
    let cfg = BoostConfig {
        spec: LossResponseSpec::l2_hierarchical(h.s.clone(), config.spec.lambda),
        ..config.clone()
    };
    let model = BoostedModel::fit(&data, &cfg)?;
    Ok(ReconcileModel {
        hierarchy: h.clone(),
        model,
        calendar: timestamps.is_some(),
    })
}

impl<T: Scalar> ReconcileModel<T> {
    /// Reconciled forecasts for rows `start..T`, using actuals only up to
    /// row `t − 1` for row `t`.
    pub fn predict(
        &self,
        y_hat: &Matrix<T>,
        actuals: &Matrix<T>,
        timestamps: Option<&[NaiveDateTime]>,
        start: usize,
    ) -> Result<Matrix<T>> {
        if self.calendar != timestamps.is_some() {
            return Err(invalid(
                "timestamps",
                if self.calendar {
                    "model was trained with calendar features"
                } else {
                    "model was trained without calendar features"
                },
            ));
        }
        let h = &self.hierarchy;
        if y_hat.cols() != h.n_series() {
            return Err(mismatch("forecast width", h.n_series(), y_hat.cols()));
        }
        let x = reconcile_features(y_hat, actuals, timestamps, start)?;
        let idx: Vec<usize> = (start..y_hat.rows()).collect();
        let bottoms = y_hat.select_rows(&idx).select_cols(&h.bottom_range().collect::<Vec<_>>());
        let correction = self.model.predict(&x, None)?;
        // Sum in bottom space, then aggregate, so the output is exactly S·b.
        let b = bottoms.add(&correction.select_cols(&h.bottom_range().collect::<Vec<_>>()))?;
        bottom_up(&b, h)
    }
}
