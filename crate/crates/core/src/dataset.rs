//! CSV ingestion, lag and calendar features, step-ahead encoding and
//! sliding-window cross-validation splits.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, MbtError, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Features `x`, targets `y` and optional linear-response features `x_lr`,
/// row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Matrix<T>,
    pub x_lr: Option<Matrix<T>>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub linear_names: Vec<String>,
    pub timestamps: Option<Vec<NaiveDateTime>>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset with generated column names.
    pub fn new(x: Matrix<T>, y: Matrix<T>, x_lr: Option<Matrix<T>>) -> Result<Self> {
        let feature_names = (0..x.cols()).map(|j| format!("x{j}")).collect();
        let target_names = (0..y.cols()).map(|j| format!("y{j}")).collect();
        let linear_names = x_lr
            .as_ref()
            .map_or(Vec::new(), |m| (0..m.cols()).map(|j| format!("lr{j}")).collect());
        let ds = Self {
            x,
            y,
            x_lr,
            feature_names,
            target_names,
            linear_names,
            timestamps: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_targets(&self) -> usize {
        self.y.cols()
    }

    pub fn n_linear(&self) -> Option<usize> {
        self.x_lr.as_ref().map(Matrix::cols)
    }

    /// Row alignment, name counts and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.y.rows() != n {
            return Err(mismatch("target rows", n, self.y.rows()));
        }
        if let Some(m) = &self.x_lr {
            if m.rows() != n {
                return Err(mismatch("x_lr rows", n, m.rows()));
            }
            if self.linear_names.len() != m.cols() {
                return Err(mismatch("linear feature names", m.cols(), self.linear_names.len()));
            }
            m.ensure_finite("x_lr")?;
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != n {
                return Err(mismatch("timestamps", n, ts.len()));
            }
        }
        if self.feature_names.len() != self.x.cols() {
            return Err(mismatch("feature names", self.x.cols(), self.feature_names.len()));
        }
        if self.target_names.len() != self.y.cols() {
            return Err(mismatch("target names", self.y.cols(), self.target_names.len()));
        }
        self.x.ensure_finite("features")?;
        self.y.ensure_finite("targets")?;
        Ok(())
    }

    /// Contiguous row slice.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let idx: Vec<usize> = range.collect();
        Self {
            x: self.x.select_rows(&idx),
            y: self.y.select_rows(&idx),
            x_lr: self.x_lr.as_ref().map(|m| m.select_rows(&idx)),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            linear_names: self.linear_names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Column roles for [`load_csv_with`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub targets: Vec<String>,
    pub timestamp: Option<String>,
    /// Columns forming `x_lr`.
    pub linear: Vec<String>,
    /// Explicit feature columns; `None` takes every remaining column.
    pub features: Option<Vec<String>>,
    /// When false, absent target columns yield an empty target matrix.
    #[serde(skip)]
    pub targets_optional: bool,
}

/// Parses an ISO-8601 timestamp or an integer epoch in seconds.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return DateTime::from_timestamp(secs, 0).map(|d| d.naive_utc());
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.naive_local());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn parse_cell<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = raw.trim().parse().map_err(|_| MbtError::InvalidCell {
        row,
        column: column.to_string(),
        reason: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MbtError::InvalidCell {
            row,
            column: column.to_string(),
            reason: format!("non-finite value `{raw}`"),
        });
    }
    T::from_f64(v).ok_or_else(|| MbtError::InvalidCell {
        row,
        column: column.to_string(),
        reason: "not representable".into(),
    })
}

/// Loads a comma-separated file with a header row.
///
/// Every column other than the targets and the timestamp becomes a feature.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, targets: &[&str], timestamp: Option<&str>) -> Result<Dataset<T>> {
    let schema = CsvSchema {
        targets: targets.iter().map(|s| s.to_string()).collect(),
        timestamp: timestamp.map(str::to_string),
        ..CsvSchema::default()
    };
    load_csv_with(path, &schema)
}

/// [`load_csv`] with full control over column roles.
///
/// Rows whose target cells are empty are dropped and counted in the log.
/// Any other empty, non-numeric or non-finite cell is an error naming the
/// file line and column. Rows are sorted by timestamp; duplicates are an
/// error.
pub fn load_csv_with<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| index.get(name).copied().ok_or_else(|| MbtError::MissingColumn(name.to_string()));

    let ts_col = schema.timestamp.as_deref().map(find).transpose()?;
    let targets_present = schema.targets.iter().all(|t| index.contains_key(t.as_str()));
    let target_cols: Vec<usize> = if targets_present || !schema.targets_optional {
        schema.targets.iter().map(|t| find(t)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let linear_cols: Vec<usize> = schema.linear.iter().map(|t| find(t)).collect::<Result<_>>()?;
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|t| find(t)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| {
                Some(i) != ts_col
                    && !linear_cols.contains(&i)
                    && !schema.targets.iter().any(|t| t == &headers[i])
            })
            .collect(),
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut lr = Vec::new();
    let mut ts = Vec::new();
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |c: usize| rec.get(c).unwrap_or("");
        if target_cols.iter().any(|&c| cell(c).trim().is_empty()) {
            dropped += 1;
            continue;
        }
        for &c in &target_cols {
            y.push(parse_cell::<T>(cell(c), line, &headers[c])?);
        }
        for &c in &feature_cols {
            x.push(parse_cell::<T>(cell(c), line, &headers[c])?);
        }
        for &c in &linear_cols {
            lr.push(parse_cell::<T>(cell(c), line, &headers[c])?);
        }
        if let Some(c) = ts_col {
            let t = parse_timestamp(cell(c)).ok_or_else(|| MbtError::InvalidCell {
                row: line,
                column: headers[c].clone(),
                reason: format!("`{}` is neither ISO-8601 nor an integer epoch", cell(c)),
            })?;
            ts.push(t);
        }
        kept += 1;
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with missing targets", path.display());
    }

    let names = |cols: &[usize]| cols.iter().map(|&c| headers[c].clone()).collect::<Vec<_>>();
    let mut ds = Dataset {
        x: Matrix::from_vec(kept, feature_cols.len(), x)?,
        y: Matrix::from_vec(kept, target_cols.len(), y)?,
        x_lr: if linear_cols.is_empty() {
            None
        } else {
            Some(Matrix::from_vec(kept, linear_cols.len(), lr)?)
        },
        feature_names: names(&feature_cols),
        target_names: names(&target_cols),
        linear_names: names(&linear_cols),
        timestamps: ts_col.map(|_| ts),
    };
    if let Some(ts) = &ds.timestamps {
        let mut order: Vec<usize> = (0..kept).collect();
        order.sort_by_key(|&i| ts[i]);
        if let Some(w) = order.windows(2).find(|w| ts[w[0]] == ts[w[1]]) {
            return Err(MbtError::DuplicateTimestamp(ts[w[0]].to_string()));
        }
        if order.iter().enumerate().any(|(k, &i)| k != i) {
            ds = Dataset {
                x: ds.x.select_rows(&order),
                y: ds.y.select_rows(&order),
                x_lr: ds.x_lr.map(|m| m.select_rows(&order)),
                timestamps: Some(order.iter().map(|&i| ts[i]).collect()),
                ..ds
            };
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Weekday (Monday = 0) and hour of day.
pub fn calendar_encoding(t: &NaiveDateTime) -> (u32, u32) {
    (t.weekday().num_days_from_monday(), t.hour())
}

/// Lagged-target features and a multi-step target.
///
/// For each anchor row `a` the features are `y[a − j]` for every series and
/// every `j` in `lags`, followed by the raw feature columns of row `a` (which
/// must therefore be known ahead of time), followed by weekday and hour of
/// row `a` when `calendar` is set. Targets are `y[a], …, y[a + horizon − 1]`
/// per series, series-major. `x_lr` and timestamps are taken at row `a`.
pub fn build_lag_features<T: Scalar>(raw: &Dataset<T>, lags: &[usize], horizon: usize, calendar: bool) -> Result<Dataset<T>> {
    let n = raw.n_rows();
    if horizon == 0 {
        return Err(invalid("horizon", "must be at least 1"));
    }
    if lags.is_empty() || lags.contains(&0) {
        return Err(invalid("lags", "must be a non-empty list of positive steps"));
    }
    if raw.n_targets() == 0 {
        return Err(invalid("targets", "lag features need at least one target series"));
    }
    let max_lag = *lags.iter().max().expect("non-empty");
    if horizon + max_lag >= n {
        return Err(MbtError::InsufficientHistory(format!(
            "horizon {horizon} + max lag {max_lag} needs more than the {n} available rows"
        )));
    }
    let ts = match (&raw.timestamps, calendar) {
        (None, true) => {
            return Err(invalid("calendar", "calendar features need a timestamp column"));
        }
        (ts, _) => ts.as_ref(),
    };
    let anchors: Vec<usize> = (max_lag..=n - horizon).collect();
    let n_s = raw.n_targets();
    let n_f = n_s * lags.len() + raw.n_features() + if calendar { 2 } else { 0 };
    let mut x = Matrix::zeros(anchors.len(), n_f);
    let mut y = Matrix::zeros(anchors.len(), n_s * horizon);
    for (r, &a) in anchors.iter().enumerate() {
        let xr = x.row_mut(r);
        let mut k = 0;
        for s in 0..n_s {
            for &j in lags {
                xr[k] = raw.y[(a - j, s)];
                k += 1;
            }
        }
        for &v in raw.x.row(a) {
            xr[k] = v;
            k += 1;
        }
        if calendar {
            let (wd, hr) = calendar_encoding(&ts.expect("checked")[a]);
            xr[k] = T::from_u32(wd).expect("small");
            xr[k + 1] = T::from_u32(hr).expect("small");
        }
        let yr = y.row_mut(r);
        for s in 0..n_s {
            for h in 0..horizon {
                yr[s * horizon + h] = raw.y[(a + h, s)];
            }
        }
    }
    let mut feature_names = Vec::with_capacity(n_f);
    for name in &raw.target_names {
        for &j in lags {
            feature_names.push(format!("{name}_lag{j}"));
        }
    }
    feature_names.extend(raw.feature_names.iter().cloned());
    if calendar {
        feature_names.push("weekday".into());
        feature_names.push("hour".into());
    }
    let target_names = raw
        .target_names
        .iter()
        .flat_map(|name| (0..horizon).map(move |h| format!("{name}_h{h}")))
        .collect();
    let ds = Dataset {
        x,
        y,
        x_lr: raw.x_lr.as_ref().map(|m| m.select_rows(&anchors)),
        feature_names,
        target_names,
        linear_names: raw.linear_names.clone(),
        timestamps: ts.map(|t| anchors.iter().map(|&a| t[a]).collect()),
    };
    ds.validate()?;
    Ok(ds)
}

/// Univariate layout of a multi-step dataset: each row is repeated `horizon`
/// times with an extra step-ahead feature `0..horizon` and a scalar target.
pub fn encode_step_ahead<T: Scalar>(mimo: &Dataset<T>, horizon: usize) -> Result<Dataset<T>> {
    if horizon == 0 || mimo.n_targets() != horizon {
        return Err(mismatch("step-ahead horizon", mimo.n_targets(), horizon));
    }
    let n = mimo.n_rows();
    let n_f = mimo.n_features();
    let mut x = Matrix::zeros(n * horizon, n_f + 1);
    let mut y = Matrix::zeros(n * horizon, 1);
    let mut src = Vec::with_capacity(n * horizon);
    for i in 0..n {
        for s in 0..horizon {
            let r = i * horizon + s;
            x.row_mut(r)[..n_f].copy_from_slice(mimo.x.row(i));
            x[(r, n_f)] = T::from_usize_lossy(s);
            y[(r, 0)] = mimo.y[(i, s)];
            src.push(i);
        }
    }
    let mut feature_names = mimo.feature_names.clone();
    feature_names.push("step_ahead".into());
    Ok(Dataset {
        x,
        y,
        x_lr: mimo.x_lr.as_ref().map(|m| m.select_rows(&src)),
        feature_names,
        target_names: vec!["y".into()],
        linear_names: mimo.linear_names.clone(),
        timestamps: mimo.timestamps.as_ref().map(|t| src.iter().map(|&i| t[i]).collect()),
    })
}

/// One chronological train/test pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub fold: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Sliding-window splits: every fold has the same train length `n_tr` and
/// test length `n_te`, the test window starts where the train window ends,
/// and each fold is shifted `n_te` rows later than the previous one. The
/// last test window ends at `n_rows`.
///
/// `n_te = ⌊n·f / (1 + (k − 1)·f)⌋`, so a single fold reproduces a plain
/// `1 − f` / `f` holdout.
pub fn sliding_window_cv(n_rows: usize, n_folds: usize, test_fraction: f64) -> Result<Vec<CvSplit>> {
    if n_folds == 0 {
        return Err(invalid("n_folds", "must be at least 1"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid("test_fraction", "must lie in (0, 1)"));
    }
    let f = test_fraction;
    let n_te = (n_rows as f64 * f / (1.0 + (n_folds as f64 - 1.0) * f) + 1e-9).floor() as usize;
    if n_te == 0 || n_folds * n_te >= n_rows {
        return Err(invalid(
            "test_fraction",
            format!("{n_rows} rows cannot hold {n_folds} folds with test fraction {f}"),
        ));
    }
    let n_tr = n_rows - n_folds * n_te;
    Ok((0..n_folds)
        .map(|k| {
            let start = k * n_te;
            CvSplit {
                fold: k,
                train: start..start + n_tr,
                test: start + n_tr..start + n_tr + n_te,
            }
        })
        .collect())
}

/// How raw CSV rows become a training or prediction dataset. Stored in the
/// model file so prediction replays the same steps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturePipeline {
    pub csv: CsvSchema,
    /// Lag steps; `None` uses the CSV feature columns as they are.
    pub lags: Option<Vec<usize>>,
    pub horizon: usize,
    pub calendar: bool,
    /// Re-encode the multi-step target in the univariate step-ahead layout.
    pub step_ahead: bool,
}

impl FeaturePipeline {
    pub fn validate(&self) -> Result<()> {
        if self.lags.is_some() && self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1 when lags are used"));
        }
        if self.lags.is_none() && (self.calendar || self.step_ahead) {
            return Err(invalid("lags", "calendar and step-ahead encodings require lags"));
        }
        Ok(())
    }

    pub fn apply<T: Scalar>(&self, raw: &Dataset<T>) -> Result<Dataset<T>> {
        self.validate()?;
        let Some(lags) = &self.lags else {
            return Ok(raw.clone());
        };
        let ds = build_lag_features(raw, lags, self.horizon, self.calendar)?;
        if self.step_ahead {
            if raw.n_targets() != 1 {
                return Err(invalid("step_ahead", "needs exactly one target series"));
            }
            encode_step_ahead(&ds, self.horizon)
        } else {
            Ok(ds)
        }
    }

    /// Loads and transforms a CSV file.
    pub fn load<T: Scalar>(&self, path: impl AsRef<Path>, targets_optional: bool) -> Result<Dataset<T>> {
        let schema = CsvSchema {
            targets_optional: targets_optional && self.lags.is_none(),
            ..self.csv.clone()
        };
        self.apply(&load_csv_with(path, &schema)?)
    }
}
