//! Stage-wise boosting loop, prediction and the versioned model file.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeaturePipeline};
use crate::error::{invalid, mismatch, MbtError, Result};
use crate::linalg::{pinv, Matrix, DEFAULT_RCOND};
use crate::lossresp::{exact_loss, LeafSolver, LossKind, LossResponseSpec, Response};
use crate::tree::{fit_tree, Tree, TreeConfig};
use crate::Scalar;

/// Model file format tag.
pub const FORMAT_VERSION: &str = "mbt-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default, deny_unknown_fields)]
pub struct BoostConfig<T> {
    pub n_rounds: usize,
    /// Shrinkage ρ applied to every tree.
    pub learning_rate: T,
    /// Penalty γ per leaf in the stopping loss.
    pub leaf_penalty: T,
    pub tree: TreeConfig,
    pub spec: LossResponseSpec<T>,
    /// Recorded for reproducibility; training itself draws no random numbers.
    pub seed: u64,
}

impl<T: Scalar> Default for BoostConfig<T> {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: T::lit(0.1),
            leaf_penalty: T::zero(),
            tree: TreeConfig::default(),
            spec: LossResponseSpec::l2_constant(T::zero()),
            seed: 0,
        }
    }
}

impl<T: Scalar> BoostConfig<T> {
    pub fn new(spec: LossResponseSpec<T>) -> Self {
        Self {
            spec,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(invalid("n_rounds", "must be at least 1"));
        }
        let rho = self.learning_rate;
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(invalid("learning_rate", format!("{rho} outside (0, 1]")));
        }
        if !(self.leaf_penalty >= T::zero()) || !self.leaf_penalty.is_finite() {
            return Err(invalid("leaf_penalty", "must be finite and non-negative"));
        }
        self.tree.validate()?;
        self.spec.validate()
    }
}

/// Initial guess plus shrunken trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct BoostedModel<T> {
    pub y0: Vec<T>,
    pub trees: Vec<Tree<T>>,
    pub config: BoostConfig<T>,
    /// Penalized training loss before the first tree and after each kept tree.
    pub trace: Vec<T>,
    /// Validation loss, aligned with `trace`, when a validation set was used.
    #[serde(default)]
    pub validation_trace: Vec<T>,
    pub n_features: usize,
    pub n_targets: usize,
    /// Width of `x_lr`; zero unless the kind is linear.
    pub n_linear: usize,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    #[serde(default)]
    pub linear_names: Vec<String>,
    #[serde(default)]
    pub pipeline: Option<FeaturePipeline>,
}

#[derive(Serialize)]
#[serde(bound = "T: Scalar")]
struct ModelFileRef<'a, T> {
    format: &'a str,
    scalar: &'a str,
    model: &'a BoostedModel<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelFile<T> {
    #[allow(dead_code)]
    format: String,
    #[allow(dead_code)]
    scalar: String,
    model: BoostedModel<T>,
}

fn initial_guess<T: Scalar>(y: &Matrix<T>, spec: &LossResponseSpec<T>) -> Result<Vec<T>> {
    let means = y.column_means();
    match spec.kind {
        // Keep the start inside span(S) so every prediction is consistent.
        LossKind::L2Hierarchical => {
            let s = spec.summation.as_ref().expect("validated");
            let coef = pinv(s, T::lit(DEFAULT_RCOND))?.mul_vec(&means)?;
            s.mul_vec(&coef)
        }
        k if k.is_quantile() => {
            let n_q = spec.n_quantiles();
            Ok(means.iter().flat_map(|&m| std::iter::repeat_n(m, n_q)).collect())
        }
        _ => Ok(means),
    }
}

/// Targets repeated across quantile levels, target-major.
fn widen_targets<T: Scalar>(y: &Matrix<T>, n_q: usize) -> Matrix<T> {
    if n_q == 1 {
        return y.clone();
    }
    Matrix::from_fn(y.rows(), y.cols() * n_q, |i, c| y[(i, c / n_q)])
}

fn add_tree<T: Scalar>(
    f: &mut Matrix<T>,
    tree: &Tree<T>,
    response: &Response<T>,
    x: &Matrix<T>,
    x_lr: Option<&Matrix<T>>,
    rho: T,
) -> Result<()> {
    let width = f.cols();
    if width == 0 {
        return Ok(());
    }
    f.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(i, row)| tree.predict_into(response, x.row(i), x_lr.map(|m| m.row(i)), rho, row))
}

fn check_inputs<T: Scalar>(data: &Dataset<T>, spec: &LossResponseSpec<T>) -> Result<()> {
    data.validate()?;
    let n_p = data.n_linear();
    spec.check_data(data.n_targets(), n_p)
}

impl<T: Scalar> BoostedModel<T> {
    /// Trains on `data` until the penalized loss stops decreasing or the
    /// round limit is reached. A tree that fails to decrease the loss is
    /// discarded.
    pub fn fit(data: &Dataset<T>, config: &BoostConfig<T>) -> Result<Self> {
        Self::fit_inner(data, None, config)
    }

    /// As [`fit`](Self::fit), additionally stopping at the first round whose
    /// tree does not decrease the loss on `valid` (that tree is discarded).
    pub fn fit_with_validation(data: &Dataset<T>, valid: &Dataset<T>, config: &BoostConfig<T>) -> Result<Self> {
        Self::fit_inner(data, Some(valid), config)
    }

    fn fit_inner(data: &Dataset<T>, valid: Option<&Dataset<T>>, config: &BoostConfig<T>) -> Result<Self> {
        config.validate()?;
        check_inputs(data, &config.spec)?;
        let n = data.n_rows();
        if n == 0 {
            return Err(invalid("data", "training set is empty"));
        }
        if n < config.tree.n_min {
            return Err(invalid(
                "data",
                format!("{n} training rows is fewer than n_min = {}", config.tree.n_min),
            ));
        }
        if let Some(v) = valid {
            check_inputs(v, &config.spec)?;
            if v.n_features() != data.n_features() {
                return Err(mismatch("validation features", data.n_features(), v.n_features()));
            }
        }
        let spec = &config.spec;
        let n_t = data.n_targets();
        let n_p = data.n_linear().unwrap_or(0);
        let solver = LeafSolver::new(spec, n_t, n_p)?;
        let response = spec.response(n_t, n_p);
        let rho = config.learning_rate;
        let gamma = config.leaf_penalty;
        let rtol = T::singular_rtol();

        let y0 = initial_guess(&data.y, spec)?;
        let y_wide = widen_targets(&data.y, spec.n_quantiles());
        let broadcast = |rows: usize| Matrix::from_fn(rows, y0.len(), |_, c| y0[c]);
        let mut f = broadcast(n);
        let mut prev = exact_loss(&data.y, &f, spec, 0, gamma)?;
        let mut trace = vec![prev];

        let mut fv = valid.map(|v| broadcast(v.n_rows()));
        let mut prev_valid = match (valid, &fv) {
            (Some(v), Some(fv)) => Some(exact_loss(&v.y, fv, spec, 0, T::zero())?),
            _ => None,
        };
        let mut validation_trace: Vec<T> = prev_valid.into_iter().collect();

        let rows: Vec<usize> = (0..n).collect();
        let mut trees: Vec<Tree<T>> = Vec::new();
        let mut leaves = 0usize;
        for round in 0..config.n_rounds {
            let residual = y_wide.sub(&f)?;
            let tree = fit_tree(&data.x, &residual, data.x_lr.as_ref(), &rows, &solver, &config.tree)?;
            let mut f_next = f.clone();
            add_tree(&mut f_next, &tree, &response, &data.x, data.x_lr.as_ref(), rho)?;
            let loss = exact_loss(&data.y, &f_next, spec, leaves + tree.n_leaves, gamma)?;
            if !loss.is_finite() {
                return Err(MbtError::NonFinite(format!("training loss at round {round}")));
            }
            if !(loss < prev - rtol * prev.abs()) {
                log::debug!("round {round}: loss {loss} does not improve on {prev}; stopping");
                break;
            }
            if let (Some(v), Some(fv_cur), Some(pv)) = (valid, fv.as_mut(), prev_valid) {
                let mut fv_next = fv_cur.clone();
                add_tree(&mut fv_next, &tree, &response, &v.x, v.x_lr.as_ref(), rho)?;
                let vl = exact_loss(&v.y, &fv_next, spec, 0, T::zero())?;
                if !(vl < pv - rtol * pv.abs()) {
                    log::debug!("round {round}: validation loss {vl} does not improve on {pv}; stopping");
                    break;
                }
                *fv_cur = fv_next;
                prev_valid = Some(vl);
                validation_trace.push(vl);
            }
            log::trace!("round {round}: {} leaves, loss {loss}", tree.n_leaves);
            leaves += tree.n_leaves;
            f = f_next;
            prev = loss;
            trace.push(loss);
            trees.push(tree);
        }
        log::info!(
            "trained {} trees ({} leaves), final loss {prev}",
            trees.len(),
            leaves
        );

        Ok(Self {
            y0,
            trees,
            config: config.clone(),
            trace,
            validation_trace,
            n_features: data.n_features(),
            n_targets: n_t,
            n_linear: n_p,
            feature_names: data.feature_names.clone(),
            target_names: data.target_names.clone(),
            linear_names: data.linear_names.clone(),
            pipeline: None,
        })
    }

    pub fn response(&self) -> Response<T> {
        self.config.spec.response(self.n_targets, self.n_linear)
    }

    pub fn output_dim(&self) -> usize {
        self.y0.len()
    }

    /// Output column names: targets, or `target@tau` pairs for quantile kinds.
    pub fn output_names(&self) -> Vec<String> {
        match &self.config.spec.taus {
            Some(taus) if self.config.spec.kind.is_quantile() => self
                .target_names
                .iter()
                .flat_map(|t| taus.iter().map(move |q| format!("{t}@{q}")))
                .collect(),
            _ => self.target_names.clone(),
        }
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.n_leaves).sum()
    }

    /// `y0 + ρ·Σ r(w)` for every row of `x`.
    pub fn predict(&self, x: &Matrix<T>, x_lr: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        if x.cols() != self.n_features {
            return Err(mismatch("feature columns", self.n_features, x.cols()));
        }
        match (self.config.spec.kind == LossKind::L2Linear, x_lr) {
            (true, None) => {
                return Err(MbtError::IncompatibleSpec("linear response model needs x_lr".into()));
            }
            (true, Some(m)) if m.cols() != self.n_linear || m.rows() != x.rows() => {
                return Err(mismatch(
                    "x_lr shape",
                    format!("{}×{}", x.rows(), self.n_linear),
                    format!("{}×{}", m.rows(), m.cols()),
                ));
            }
            _ => {}
        }
        let x_lr = x_lr.filter(|_| self.config.spec.kind == LossKind::L2Linear);
        let response = self.response();
        let rho = self.config.learning_rate;
        let width = self.output_dim();
        let mut out = Matrix::from_fn(x.rows(), width, |_, c| self.y0[c]);
        if width > 0 {
            out.as_mut_slice()
                .par_chunks_mut(width)
                .enumerate()
                .try_for_each(|(i, row)| -> Result<()> {
                    let xr = x.row(i);
                    let lr = x_lr.map(|m| m.row(i));
                    for t in &self.trees {
                        t.predict_into(&response, xr, lr, rho, row)?;
                    }
                    Ok(())
                })?;
        }
        Ok(out)
    }

    pub fn predict_dataset(&self, data: &Dataset<T>) -> Result<Matrix<T>> {
        self.predict(&data.x, data.x_lr.as_ref())
    }

    /// Penalized loss of the model on `data`, as used by the stopping rule.
    pub fn score(&self, data: &Dataset<T>) -> Result<T> {
        let yhat = self.predict_dataset(data)?;
        exact_loss(&data.y, &yhat, &self.config.spec, self.total_leaves(), self.config.leaf_penalty)
    }

    /// Serializes to the versioned JSON format.
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFileRef {
            format: FORMAT_VERSION,
            scalar: T::NAME,
            model: self,
        };
        serde_json::to_string_pretty(&file).map_err(|e| MbtError::Schema(e.to_string()))
    }

    /// Parses and validates a model file. Nothing is returned unless the
    /// whole document is well formed.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| MbtError::Schema(format!("not valid JSON: {e}")))?;
        let format = value
            .get("format")
            .and_then(|v| v.as_str())
            .ok_or_else(|| MbtError::Schema("missing `format` field".into()))?;
        if format != FORMAT_VERSION {
            return Err(MbtError::Version {
                found: format.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let scalar = value.get("scalar").and_then(|v| v.as_str()).unwrap_or("");
        if scalar != T::NAME {
            return Err(MbtError::Version {
                found: format!("{format}/{scalar}"),
                expected: format!("{FORMAT_VERSION}/{}", T::NAME),
            });
        }
        let file: ModelFile<T> = serde_path_to_error::deserialize(value)
            .map_err(|e| MbtError::Schema(format!("at `{}`: {}", e.path(), e.inner())))?;
        let model = file.model;
        model.check()?;
        Ok(model)
    }

    /// Semantic consistency of a deserialized model.
    pub fn check(&self) -> Result<()> {
        let schema = |e: MbtError| MbtError::Schema(e.to_string());
        self.config.validate().map_err(schema)?;
        let spec = &self.config.spec;
        let n_p = (spec.kind == LossKind::L2Linear).then_some(self.n_linear);
        spec.check_data(self.n_targets, n_p).map_err(schema)?;
        if self.y0.len() != spec.output_dim(self.n_targets) {
            return Err(MbtError::Schema(format!(
                "y0 has {} entries, expected {}",
                self.y0.len(),
                spec.output_dim(self.n_targets)
            )));
        }
        if self.y0.iter().chain(&self.trace).any(|v| !v.is_finite()) {
            return Err(MbtError::Schema("non-finite y0 or trace value".into()));
        }
        if self.trace.len() != self.trees.len() + 1 {
            return Err(MbtError::Schema(format!(
                "trace has {} entries for {} trees",
                self.trace.len(),
                self.trees.len()
            )));
        }
        if self.feature_names.len() != self.n_features || self.target_names.len() != self.n_targets {
            return Err(MbtError::Schema("column name counts disagree with dimensions".into()));
        }
        let n_r = spec.param_dim(self.n_targets, self.n_linear);
        for (k, t) in self.trees.iter().enumerate() {
            t.check(self.n_features, n_r)
                .map_err(|e| MbtError::Schema(format!("tree {k}: {e}")))?;
        }
        Ok(())
    }

    /// Writes the model atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_json()? + "\n")?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn fit<T: Scalar>(data: &Dataset<T>, config: &BoostConfig<T>) -> Result<BoostedModel<T>> {
    BoostedModel::fit(data, config)
}

pub fn predict<T: Scalar>(model: &BoostedModel<T>, x: &Matrix<T>, x_lr: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    model.predict(x, x_lr)
}
