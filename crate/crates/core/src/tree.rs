//! Depth-wise multivariate regression trees fitted on second-order leaf
//! statistics with per-node histogram split search.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, MbtError, Result};
use crate::linalg::Matrix;
use crate::lossresp::{
    empirical_quantile, refit_quantile_leaf, LeafSolver, LeafStats, LossKind, Response, RowGradients,
};
use crate::Scalar;

/// Deepest tree accepted; nested JSON stays well inside parser limits.
pub const MAX_DEPTH_LIMIT: usize = 48;

/// Stopping and binning controls for a single tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Minimum rows per leaf.
    pub n_min: usize,
    pub max_depth: usize,
    /// Histogram bins per feature and node.
    pub n_bins: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            n_min: 20,
            max_depth: 6,
            n_bins: 32,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 {
            return Err(invalid("n_min", "must be at least 1"));
        }
        if self.n_bins < 2 {
            return Err(invalid("n_bins", "must be at least 2"));
        }
        if self.max_depth > MAX_DEPTH_LIMIT {
            return Err(invalid("max_depth", format!("must be at most {MAX_DEPTH_LIMIT}")));
        }
        Ok(())
    }
}

/// Candidate thresholds per feature for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram<T> {
    pub edges: Vec<Vec<T>>,
}

/// Edges for one feature from the node's sorted values.
///
/// Interpolated quantiles at `k/n_b`, deduplicated, keeping only edges below
/// the maximum so both sides are non-empty. When `n_b` is at least the number
/// of distinct values every midpoint between consecutive distinct values is
/// used instead.
pub fn edges_from_sorted<T: Scalar>(sorted: &[T], n_b: usize) -> Vec<T> {
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    let mut distinct: Vec<T> = Vec::new();
    for &v in sorted {
        if distinct.last() != Some(&v) {
            distinct.push(v);
            if distinct.len() > n_b {
                break;
            }
        }
    }
    if distinct.len() < 2 {
        return Vec::new();
    }
    if distinct.len() <= n_b {
        return distinct
            .windows(2)
            .map(|p| {
                let mid = p[0] + (p[1] - p[0]) * T::lit(0.5);
                if mid < p[1] {
                    mid
                } else {
                    p[0]
                }
            })
            .collect();
    }
    let nb = T::from_usize_lossy(n_b);
    let mut edges: Vec<T> = Vec::with_capacity(n_b - 1);
    for k in 1..n_b {
        let e = empirical_quantile(sorted, T::from_usize_lossy(k) / nb);
        if e < max && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

fn sorted_feature<T: Scalar>(x: &Matrix<T>, rows: &[usize], j: usize) -> (Vec<usize>, Vec<T>) {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        x[(rows[a], j)]
            .partial_cmp(&x[(rows[b], j)])
            .unwrap_or(Ordering::Equal)
    });
    let vals = order.iter().map(|&p| x[(rows[p], j)]).collect();
    (order, vals)
}

/// Per-feature edges computed from the rows reaching a node.
pub fn compute_bin_edges<T: Scalar>(x: &Matrix<T>, rows: &[usize], n_b: usize) -> Result<Histogram<T>> {
    if n_b < 2 {
        return Err(invalid("n_bins", "must be at least 2"));
    }
    let edges = (0..x.cols())
        .map(|j| edges_from_sorted(&sorted_feature(x, rows, j).1, n_b))
        .collect();
    Ok(Histogram { edges })
}

/// A chosen split and the summed optimal loss of its two children.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate<T> {
    pub feature: usize,
    pub threshold: T,
    pub loss: T,
}

fn is_better<T: Scalar>(a: &SplitCandidate<T>, b: &SplitCandidate<T>) -> bool {
    a.loss < b.loss || (a.loss == b.loss && (a.feature, a.threshold) < (b.feature, b.threshold))
}

fn leaf_loss_or_skip<T: Scalar>(solver: &LeafSolver<T>, s: &LeafStats<T>) -> Result<Option<T>> {
    match solver.solve(s) {
        Ok(sol) => Ok(Some(sol.loss)),
        Err(MbtError::Singular(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn scan_feature<T: Scalar>(
    x: &Matrix<T>,
    rows: &[usize],
    grads: &RowGradients<T>,
    solver: &LeafSolver<T>,
    j: usize,
    n_b: usize,
    n_min: usize,
) -> Result<Option<SplitCandidate<T>>> {
    let (order, vals) = sorted_feature(x, rows, j);
    let edges = edges_from_sorted(&vals, n_b);
    if edges.is_empty() {
        return Ok(None);
    }
    // Bin b holds rows with edges[b-1] < x ≤ edges[b]; the last bin is x > last edge.
    let mut bins: Vec<LeafStats<T>> = (0..=edges.len()).map(|_| grads.empty_stats()).collect();
    let mut b = 0;
    for (&p, &v) in order.iter().zip(&vals) {
        while b < edges.len() && v > edges[b] {
            b += 1;
        }
        grads.add_row(&mut bins[b], p);
    }
    let mut suffix: Vec<LeafStats<T>> = Vec::with_capacity(edges.len());
    let mut acc = grads.empty_stats();
    for s in bins[1..].iter().rev() {
        acc.merge(s);
        suffix.push(acc.clone());
    }
    suffix.reverse();

    let mut best: Option<SplitCandidate<T>> = None;
    let mut left = grads.empty_stats();
    for (k, &edge) in edges.iter().enumerate() {
        left.merge(&bins[k]);
        let right = &suffix[k];
        if left.n < n_min || right.n < n_min {
            continue;
        }
        let (Some(a), Some(c)) = (leaf_loss_or_skip(solver, &left)?, leaf_loss_or_skip(solver, right)?) else {
            continue;
        };
        let cand = SplitCandidate {
            feature: j,
            threshold: edge,
            loss: a + c,
        };
        if best.as_ref().is_none_or(|bst| cand.loss < bst.loss) {
            best = Some(cand);
        }
    }
    Ok(best)
}

/// Best admissible split of a node.
///
/// `grads` is indexed by position in `rows`. Each feature is scanned once
/// left to right over its histogram bins; the winner must leave at least
/// `n_min` rows on each side and beat `parent_loss` strictly. Ties go to the
/// lower feature index, then the lower threshold.
pub fn find_best_split<T: Scalar>(
    x: &Matrix<T>,
    rows: &[usize],
    grads: &RowGradients<T>,
    solver: &LeafSolver<T>,
    parent_loss: T,
    n_b: usize,
    n_min: usize,
) -> Result<Option<SplitCandidate<T>>> {
    if grads.len() != rows.len() {
        return Err(mismatch("split gradients", rows.len(), grads.len()));
    }
    if rows.len() < 2 * n_min.max(1) {
        return Ok(None);
    }
    let per_feature = (0..x.cols())
        .into_par_iter()
        .map(|j| scan_feature(x, rows, grads, solver, j, n_b, n_min))
        .collect::<Result<Vec<_>>>()?;
    let best = per_feature
        .into_iter()
        .flatten()
        .fold(None, |best: Option<SplitCandidate<T>>, c| match best {
            Some(b) if !is_better(&c, &b) => Some(b),
            _ => Some(c),
        });
    let tol = T::singular_rtol() * parent_loss.abs();
    Ok(best.filter(|b| b.loss < parent_loss - tol))
}

/// A node of a fitted tree. Rows with `x[feature] ≤ threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Scalar")]
pub enum TreeNode<T> {
    Split {
        feature: usize,
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
    Leaf {
        w: Vec<T>,
        n_rows: usize,
    },
}

impl<T: Scalar> TreeNode<T> {
    fn count_leaves(&self) -> usize {
        match self {
            Self::Split { left, right, .. } => left.count_leaves() + right.count_leaves(),
            Self::Leaf { .. } => 1,
        }
    }

    fn depth(&self) -> usize {
        match self {
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            Self::Leaf { .. } => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub root: TreeNode<T>,
    pub n_leaves: usize,
}

impl<T: Scalar> Tree<T> {
    pub fn single_leaf(w: Vec<T>, n_rows: usize) -> Self {
        Self {
            root: TreeNode::Leaf { w, n_rows },
            n_leaves: 1,
        }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Leaf parameter vectors in left-to-right order.
    pub fn leaves(&self) -> Vec<&[T]> {
        fn walk<'a, T>(n: &'a TreeNode<T>, out: &mut Vec<&'a [T]>) {
            match n {
                TreeNode::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
                TreeNode::Leaf { w, .. } => out.push(w),
            }
        }
        let mut out = Vec::with_capacity(self.n_leaves);
        walk(&self.root, &mut out);
        out
    }

    /// Leaf parameters reached by a feature row.
    pub fn route(&self, x_row: &[T]) -> &[T] {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x_row[*feature] <= *threshold { left } else { right };
                }
                TreeNode::Leaf { w, .. } => return w,
            }
        }
    }

    /// Structural checks used when loading a model.
    pub fn check(&self, n_features: usize, param_dim: usize) -> Result<()> {
        fn walk<T: Scalar>(n: &TreeNode<T>, nf: usize, nr: usize, path: &mut String) -> Result<usize> {
            match n {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= nf {
                        return Err(MbtError::Schema(format!(
                            "node {path}: feature {feature} out of range ({nf} features)"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(MbtError::Schema(format!("node {path}: non-finite threshold")));
                    }
                    path.push('L');
                    let a = walk(left, nf, nr, path)?;
                    path.pop();
                    path.push('R');
                    let b = walk(right, nf, nr, path)?;
                    path.pop();
                    Ok(a + b)
                }
                TreeNode::Leaf { w, .. } => {
                    if w.len() != nr {
                        return Err(MbtError::Schema(format!(
                            "node {path}: leaf has {} parameters, expected {nr}",
                            w.len()
                        )));
                    }
                    if w.iter().any(|v| !v.is_finite()) {
                        return Err(MbtError::Schema(format!("node {path}: non-finite leaf value")));
                    }
                    Ok(1)
                }
            }
        }
        let mut path = String::from("root:");
        let n = walk(&self.root, n_features, param_dim, &mut path)?;
        if n != self.n_leaves {
            return Err(MbtError::Schema(format!(
                "tree declares {} leaves but has {n}",
                self.n_leaves
            )));
        }
        if self.depth() > MAX_DEPTH_LIMIT {
            return Err(MbtError::Schema("tree deeper than the supported limit".into()));
        }
        Ok(())
    }

    /// Adds `scale · r(w_l)` for the leaf reached by `x_row` into `out`.
    pub fn predict_into(
        &self,
        response: &Response<T>,
        x_row: &[T],
        x_lr_row: Option<&[T]>,
        scale: T,
        out: &mut [T],
    ) -> Result<()> {
        response.apply_into(self.route(x_row), x_lr_row, scale, out)
    }
}

/// Tree output `r(w_l)` for one row.
pub fn tree_predict<T: Scalar>(
    tree: &Tree<T>,
    response: &Response<T>,
    x_row: &[T],
    x_lr_row: Option<&[T]>,
) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); response.output_dim()];
    tree.predict_into(response, x_row, x_lr_row, T::one(), &mut out)?;
    Ok(out)
}

struct FitContext<'a, T> {
    x: &'a Matrix<T>,
    residual: &'a Matrix<T>,
    x_lr: Option<&'a Matrix<T>>,
    solver: &'a LeafSolver<T>,
    config: TreeConfig,
}

/// Rows above which sibling subtrees are fitted concurrently.
const PARALLEL_NODE_ROWS: usize = 2048;

impl<T: Scalar> FitContext<'_, T> {
    fn recompute_per_node(&self) -> bool {
        self.solver.spec().kind == LossKind::QuantileLinQuad
    }

    fn node_gradients(&self, rows: &[usize]) -> Result<RowGradients<T>> {
        let r = self.residual.select_rows(rows);
        let xl = self.x_lr.map(|m| m.select_rows(rows));
        self.solver.row_gradients(&r, xl.as_ref())
    }

    fn leaf(&self, rows: &[usize], grads: &RowGradients<T>, path: &str) -> Result<TreeNode<T>> {
        let spec = self.solver.spec();
        let w = if spec.refit {
            let taus = spec.taus.as_ref().expect("validated");
            refit_quantile_leaf(&self.residual.select_rows(rows), taus)?
        } else {
            self.solver
                .optimal_leaf_response(&grads.total())
                .map_err(|e| at_node(e, path))?
        };
        Ok(TreeNode::Leaf { w, n_rows: rows.len() })
    }

    fn grow(&self, rows: Vec<usize>, grads: RowGradients<T>, depth: usize, path: String) -> Result<TreeNode<T>> {
        let cfg = self.config;
        if depth >= cfg.max_depth || rows.len() < 2 * cfg.n_min {
            return self.leaf(&rows, &grads, &path);
        }
        let parent = match self.solver.solve(&grads.total()) {
            Ok(s) => s.loss,
            Err(MbtError::Singular(_)) => T::infinity(),
            Err(e) => return Err(at_node(e, &path)),
        };
        let split = find_best_split(self.x, &rows, &grads, self.solver, parent, cfg.n_bins, cfg.n_min)
            .map_err(|e| at_node(e, &path))?;
        let Some(split) = split else {
            return self.leaf(&rows, &grads, &path);
        };
        let mut lpos = Vec::new();
        let mut rpos = Vec::new();
        for (p, &r) in rows.iter().enumerate() {
            if self.x[(r, split.feature)] <= split.threshold {
                lpos.push(p);
            } else {
                rpos.push(p);
            }
        }
        let lrows: Vec<usize> = lpos.iter().map(|&p| rows[p]).collect();
        let rrows: Vec<usize> = rpos.iter().map(|&p| rows[p]).collect();
        let (lg, rg) = if self.recompute_per_node() {
            (self.node_gradients(&lrows)?, self.node_gradients(&rrows)?)
        } else {
            (grads.select(&lpos), grads.select(&rpos))
        };
        drop(grads);
        let lpath = format!("{path}L");
        let rpath = format!("{path}R");
        let (left, right) = if rows.len() >= PARALLEL_NODE_ROWS {
            rayon::join(
                || self.grow(lrows, lg, depth + 1, lpath),
                || self.grow(rrows, rg, depth + 1, rpath),
            )
        } else {
            (
                self.grow(lrows, lg, depth + 1, lpath),
                self.grow(rrows, rg, depth + 1, rpath),
            )
        };
        Ok(TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left?),
            right: Box::new(right?),
        })
    }
}

fn at_node(e: MbtError, path: &str) -> MbtError {
    match e {
        MbtError::Singular(msg) => MbtError::Singular(format!("leaf {path}: {msg}")),
        other => other,
    }
}

/// Fits one tree to the residuals `ε = y − F` of the given training rows.
///
/// `x` and `residual` (and `x_lr` for the linear kind) are indexed by dataset
/// row; only `rows` take part. Node paths in errors read `root:` followed by
/// `L`/`R` steps.
pub fn fit_tree<T: Scalar>(
    x: &Matrix<T>,
    residual: &Matrix<T>,
    x_lr: Option<&Matrix<T>>,
    rows: &[usize],
    solver: &LeafSolver<T>,
    config: &TreeConfig,
) -> Result<Tree<T>> {
    config.validate()?;
    if residual.rows() != x.rows() {
        return Err(mismatch("residual rows", x.rows(), residual.rows()));
    }
    if let Some(m) = x_lr {
        if m.rows() != x.rows() {
            return Err(mismatch("x_lr rows", x.rows(), m.rows()));
        }
    }
    if rows.is_empty() || rows.len() < config.n_min {
        return Err(invalid(
            "rows",
            format!("{} rows cannot form a leaf of at least n_min = {}", rows.len(), config.n_min),
        ));
    }
    let ctx = FitContext {
        x,
        residual,
        x_lr,
        solver,
        config: *config,
    };
    let grads = ctx.node_gradients(rows)?;
    let root = ctx.grow(rows.to_vec(), grads, 0, "root:".into())?;
    let n_leaves = root.count_leaves();
    Ok(Tree { root, n_leaves })
}
