use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use mbt::dataset::{load_csv_with, parse_timestamp, sliding_window_cv, CsvSchema, FeaturePipeline};
use mbt::metrics::{self, MetricRecord};
use mbt::reconcile::{bottom_up, estimate_omega, gls_reconcile, hierarchy_from_json, mbt_reconcile_fit, OmegaEstimator};
use mbt::{BoostConfig, Dataset64, LossResponseSpec, Matrix64, Model64};
use serde_json::json;

use crate::config::{load_config, parse_lags, Config, ModelSection};
use crate::io::{format_timestamp, has_no_rows, read_table, write_table, write_text, Table};

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

pub trait Classify<T> {
    fn input(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> CmdResult<T> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into(),
        })
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

fn input_err<T>(msg: impl fmt::Display) -> CmdResult<T> {
    Err(anyhow!("{msg}")).input()
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Configuration JSON.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Training CSV.
    #[arg(short, long)]
    pub data: Option<PathBuf>,
    /// Model output path.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Loss trace CSV (defaults to the model path with `.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Lag steps, e.g. `1,2,24-30`; overrides the config.
    #[arg(long)]
    pub lags: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Add weekday and hour features.
    #[arg(long)]
    pub calendar: bool,
    /// Print the resolved configuration with all defaults and exit.
    #[arg(long)]
    pub print_config: bool,
}

fn resolved_config(path: Option<&Path>, lags: Option<&str>, horizon: Option<usize>, calendar: bool) -> CmdResult<Config> {
    let mut cfg = match path {
        Some(p) => load_config(p).input()?,
        None => Config::default(),
    };
    if let Some(l) = lags {
        cfg.features.lags = Some(parse_lags(l).context("--lags").input()?);
    }
    if let Some(h) = horizon {
        cfg.features.horizon = h;
    }
    if calendar {
        cfg.features.calendar = true;
    }
    Ok(cfg)
}

/// Loads the data named by the config; the returned pipeline pins the raw
/// feature columns so prediction reads the same ones.
fn load_training_data(cfg: &mut Config, cfg_path: &Path, data: &Path) -> CmdResult<(FeaturePipeline, Dataset64)> {
    cfg.resolve_targets(&base_dir(cfg_path)).input()?;
    let mut pipeline = cfg.pipeline();
    pipeline.validate().input()?;
    let raw = load_csv_with::<f64>(data, &pipeline.csv)
        .with_context(|| format!("loading {}", data.display()))
        .input()?;
    pipeline.csv.features = Some(raw.feature_names.clone());
    let ds = pipeline.apply(&raw).input()?;
    Ok((pipeline, ds))
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> CmdResult<&'a Path> {
    match v {
        Some(p) => Ok(p),
        None => input_err(format!("{flag} is required")),
    }
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let mut cfg = resolved_config(args.config.as_deref(), args.lags.as_deref(), args.horizon, args.calendar)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let cfg_path = require(&args.config, "--config")?;
    let data = require(&args.data, "--data")?;
    let out = require(&args.out, "--out")?;
    let (pipeline, ds) = load_training_data(&mut cfg, cfg_path, data)?;
    let boost = cfg.boost_config(ds.n_targets(), &base_dir(cfg_path)).input()?;
    log::info!(
        "training on {} rows, {} features, {} targets ({})",
        ds.n_rows(),
        ds.n_features(),
        ds.n_targets(),
        boost.spec.kind.name()
    );

    let mut model = match cfg.boost.validation_fraction {
        None => Model64::fit(&ds, &boost).runtime()?,
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return input_err("boost.validation_fraction must lie in (0, 1)");
            }
            let n = ds.n_rows();
            let n_valid = ((n as f64 * f).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            let split = n - n_valid;
            let (tr, va) = (ds.slice_rows(0..split), ds.slice_rows(split..n));
            Model64::fit_with_validation(&tr, &va, &boost).runtime()?
        }
    };
    model.pipeline = Some(pipeline);
    model.save(out).runtime()?;

    let trace_path = args.trace.clone().unwrap_or_else(|| out.with_extension("trace.csv"));
    write_trace(&trace_path, &model).runtime()?;
    log::info!("wrote {} and {}", out.display(), trace_path.display());
    Ok(())
}

fn write_trace(path: &Path, model: &Model64) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let with_valid = model.validation_trace.len() == model.trace.len() && !model.trace.is_empty();
    if with_valid {
        wtr.write_record(["round", "loss", "validation_loss"])?;
    } else {
        wtr.write_record(["round", "loss"])?;
    }
    for (k, loss) in model.trace.iter().enumerate() {
        let mut rec = vec![k.to_string(), loss.to_string()];
        if with_valid {
            rec.push(model.validation_trace[k].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model file written by `train`.
    #[arg(short, long)]
    pub model: PathBuf,
    /// Input CSV.
    #[arg(short, long)]
    pub data: PathBuf,
    /// Predictions CSV.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the aligned targets, when the input has them.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

fn model_pipeline(model: &Model64) -> FeaturePipeline {
    model.pipeline.clone().unwrap_or_else(|| FeaturePipeline {
        csv: CsvSchema {
            targets: model.target_names.clone(),
            timestamp: None,
            linear: model.linear_names.clone(),
            features: Some(model.feature_names.clone()),
            targets_optional: true,
        },
        lags: None,
        horizon: 1,
        calendar: false,
        step_ahead: false,
    })
}

pub fn predict(args: &PredictArgs) -> CmdResult {
    let model = Model64::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))
        .input()?;
    let pipeline = model_pipeline(&model);
    let names = model.output_names();
    if has_no_rows(&args.data).input()? {
        let ts: Option<&[String]> = pipeline.csv.timestamp.as_ref().map(|_| &[][..]);
        write_table(&args.out, &names, ts, &Matrix64::zeros(0, names.len())).runtime()?;
        if let Some(p) = &args.truth_out {
            write_table(p, &model.target_names, ts, &Matrix64::zeros(0, model.n_targets)).runtime()?;
        }
        return Ok(());
    }
    let ds: Dataset64 = pipeline
        .load(&args.data, true)
        .with_context(|| format!("loading {}", args.data.display()))
        .input()?;
    if ds.feature_names != model.feature_names {
        return input_err(format!(
            "feature columns [{}] do not match the model's [{}]",
            ds.feature_names.join(", "),
            model.feature_names.join(", ")
        ));
    }
    if ds.linear_names != model.linear_names {
        return input_err("linear-response columns do not match the model");
    }
    let yhat = model.predict(&ds.x, ds.x_lr.as_ref()).runtime()?;
    let ts: Option<Vec<String>> = ds.timestamps.as_ref().map(|t| t.iter().map(format_timestamp).collect());
    write_table(&args.out, &names, ts.as_deref(), &yhat).runtime()?;
    if let Some(p) = &args.truth_out {
        if ds.n_targets() != model.n_targets {
            return input_err("input has no target columns to write");
        }
        write_table(p, &ds.target_names, ts.as_deref(), &ds.y).runtime()?;
    }
    log::info!("wrote {} rows to {}", yhat.rows(), args.out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Point,
    Quantile,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predictions CSV.
    #[arg(short, long)]
    pub pred: PathBuf,
    /// Truth CSV.
    #[arg(short, long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value = "point")]
    pub mode: EvalMode,
    /// Benchmark quantile predictions for reliability skill.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write metrics with a summary as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Name of a timestamp column to ignore.
    #[arg(long, default_value = "timestamp")]
    pub timestamp_col: String,
}

/// Splits `name@tau` headers into target names and the shared τ grid.
pub fn parse_quantile_headers(headers: &[String]) -> anyhow::Result<(Vec<String>, Vec<f64>)> {
    let mut targets: Vec<String> = Vec::new();
    let mut taus: Vec<f64> = Vec::new();
    let mut parsed = Vec::with_capacity(headers.len());
    for h in headers {
        let (name, tau) = h
            .rsplit_once('@')
            .ok_or_else(|| anyhow!("quantile column `{h}` is not of the form name@tau"))?;
        let tau: f64 = tau.parse().map_err(|_| anyhow!("bad τ in column `{h}`"))?;
        if targets.last().map(String::as_str) != Some(name) {
            targets.push(name.to_string());
        }
        if targets.len() == 1 {
            taus.push(tau);
        }
        parsed.push((name.to_string(), tau));
    }
    let n_q = taus.len();
    if n_q == 0 || targets.len() * n_q != headers.len() {
        anyhow::bail!("quantile columns must be grouped by target with the same τ grid");
    }
    for (c, (name, tau)) in parsed.iter().enumerate() {
        if name != &targets[c / n_q] || *tau != taus[c % n_q] {
            anyhow::bail!("column `{}` breaks the target-major name@tau layout", headers[c]);
        }
    }
    Ok((targets, taus))
}

/// Truth columns matching `names`, or the whole table when widths agree.
fn aligned(truth: &Table, names: &[String], rows: usize) -> CmdResult<Matrix64> {
    if truth.n_rows() != rows {
        return input_err(format!("row counts differ: {} predictions vs {} truth rows", rows, truth.n_rows()));
    }
    if truth.has_all(names) {
        truth.select(names).input()
    } else if truth.headers.len() == names.len() {
        Ok(truth.data.clone())
    } else {
        input_err(format!("truth is missing columns among [{}]", names.join(", ")))
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let ts = Some(args.timestamp_col.as_str());
    let pred = read_table(&args.pred, ts).input()?;
    let truth = read_table(&args.truth, ts).input()?;
    if pred.n_rows() == 0 {
        return input_err("no prediction rows to evaluate");
    }
    let (records, summary) = match args.mode {
        EvalMode::Point => {
            if args.benchmark.is_some() {
                return input_err("--benchmark applies to quantile mode only");
            }
            let y = aligned(&truth, &pred.headers, pred.n_rows())?;
            let pm = metrics::point_metrics(&y, &pred.data).input()?;
            let rec = metrics::point_records(&y, &pred.data).input()?;
            (rec, json!({"rmse": pm.rmse, "mape": pm.mape, "mape_excluded": pm.mape_excluded}))
        }
        EvalMode::Quantile => {
            let (targets, taus) = parse_quantile_headers(&pred.headers).input()?;
            let y = aligned(&truth, &targets, pred.n_rows())?;
            let bench = match &args.benchmark {
                Some(p) => {
                    let b = read_table(p, ts).input()?;
                    Some(aligned(&b, &pred.headers, pred.n_rows())?)
                }
                None => None,
            };
            let rec = metrics::quantile_records(&y, &pred.data, &taus, bench.as_ref()).input()?;
            let loss = metrics::avg_quantile_loss(&y, &pred.data, &taus).input()?;
            let mean_loss = loss.as_slice().iter().sum::<f64>() / loss.as_slice().len().max(1) as f64;
            let mut summary = json!({"mean_quantile_loss": mean_loss, "n_quantiles": taus.len()});
            if taus.len() >= 2 {
                let qs = metrics::quantile_score(&y, &pred.data, &taus).input()?;
                summary["mean_quantile_score"] = json!(qs.iter().sum::<f64>() / qs.len().max(1) as f64);
                summary["crossing_rate"] = json!(metrics::crossing_rate(&pred.data, taus.len()).input()?);
            }
            (rec, summary)
        }
    };
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .runtime()?;
    metrics::write_metrics_csv(&records, file).runtime()?;
    if let Some(p) = &args.json {
        let mode = match args.mode {
            EvalMode::Point => "point",
            EvalMode::Quantile => "quantile",
        };
        let doc = json!({"mode": mode, "summary": summary, "records": records});
        write_text(p, &(serde_json::to_string_pretty(&doc).expect("json") + "\n")).runtime()?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bottomup,
    Gls,
    Mbt,
}

#[derive(Args, Debug)]
pub struct ReconcileArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Parent → children JSON map.
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Base forecasts CSV, one column per series.
    #[arg(long)]
    pub forecasts: PathBuf,
    /// Observed values, same layout as the forecasts.
    #[arg(long)]
    pub actuals: Option<PathBuf>,
    /// identity, diagonal, full, or a CSV holding Ω.
    #[arg(long, default_value = "identity")]
    pub omega: String,
    /// Leading rows used for fitting (Ω or the correction model); output
    /// covers the remaining rows.
    #[arg(long)]
    pub train_rows: Option<usize>,
    /// Boosting configuration for `mbt`; the model λ is taken from it.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Use weekday and hour of the timestamp column as features (`mbt`).
    #[arg(long)]
    pub calendar: bool,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_col: String,
    /// Reconciled CSV.
    #[arg(short, long)]
    pub out: PathBuf,
    /// JSON summary with consistency and RMSE against bottom-up.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn model_lambda(m: &ModelSection) -> f64 {
    match *m {
        ModelSection::L2Constant { lambda }
        | ModelSection::L2Smooth { lambda }
        | ModelSection::L2Fourier { lambda, .. }
        | ModelSection::L2Hierarchical { lambda, .. }
        | ModelSection::L2Linear { lambda }
        | ModelSection::QuantileSmoothed { lambda, .. }
        | ModelSection::QuantileLinquad { lambda, .. } => lambda,
    }
}

pub fn reconcile(args: &ReconcileArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.hierarchy)
        .with_context(|| format!("reading {}", args.hierarchy.display()))
        .input()?;
    let h = hierarchy_from_json::<f64>(&text).input()?;
    let bottom_names = h.names[h.bottom_range()].to_vec();
    let fc = read_table(&args.forecasts, Some(&args.timestamp_col)).input()?;
    let n = fc.n_rows();
    let actuals = match &args.actuals {
        Some(p) => {
            let a = read_table(p, Some(&args.timestamp_col)).input()?;
            if a.n_rows() != n {
                return input_err(format!("actuals have {} rows, forecasts {n}", a.n_rows()));
            }
            Some(a.select(&h.names).context("actuals").input()?)
        }
        None => None,
    };
    let start = args.train_rows.unwrap_or(0);
    if start > n {
        return input_err(format!("--train-rows {start} exceeds the {n} forecast rows"));
    }
    let yb = fc.select(&bottom_names).context("forecasts").input()?;
    let bu = bottom_up(&yb, &h).runtime()?;

    let out_full = match args.method {
        Method::Bottomup => bu.clone(),
        Method::Gls => {
            let yhat = fc.select(&h.names).context("forecasts").input()?;
            let omega = match args.omega.as_str() {
                "identity" => Matrix64::identity(h.n_series()),
                name @ ("diagonal" | "full") => {
                    let Some(a) = &actuals else {
                        return input_err("--omega diagonal/full needs --actuals");
                    };
                    let fit_rows: Vec<usize> = (0..if start > 0 { start } else { n }).collect();
                    let err = a.select_rows(&fit_rows).sub(&yhat.select_rows(&fit_rows)).runtime()?;
                    let est = if name == "diagonal" {
                        OmegaEstimator::Diagonal
                    } else {
                        OmegaEstimator::Full
                    };
                    estimate_omega(&err, est).input()?
                }
                path => read_table(Path::new(path), None).input()?.data,
            };
            gls_reconcile(&yhat, &h, &omega).runtime()?
        }
        Method::Mbt => {
            let yhat = fc.select(&h.names).context("forecasts").input()?;
            let Some(a) = &actuals else {
                return input_err("--method mbt needs --actuals");
            };
            if start < 2 || start >= n {
                return input_err("--method mbt needs --train-rows between 2 and the number of rows minus one");
            }
            let cfg = match &args.config {
                Some(p) => load_config(p).input()?,
                None => Config::default(),
            };
            let boost = BoostConfig {
                n_rounds: cfg.boost.n_rounds,
                learning_rate: cfg.boost.learning_rate,
                leaf_penalty: cfg.boost.leaf_penalty,
                tree: cfg.tree,
                spec: LossResponseSpec::l2_hierarchical(h.s.clone(), model_lambda(&cfg.model)),
                seed: cfg.boost.seed,
            };
            boost.validate().input()?;
            let ts = if args.calendar {
                let Some(raw) = &fc.timestamps else {
                    return input_err(format!("--calendar needs a `{}` column", args.timestamp_col));
                };
                Some(
                    raw.iter()
                        .map(|s| parse_timestamp(s).ok_or_else(|| anyhow!("bad timestamp `{s}`")))
                        .collect::<anyhow::Result<Vec<_>>>()
                        .input()?,
                )
            } else {
                None
            };
            let train: Vec<usize> = (0..start).collect();
            let model = mbt_reconcile_fit(
                &yhat.select_rows(&train),
                &a.select_rows(&train),
                ts.as_ref().map(|t| &t[..start]),
                &h,
                &boost,
            )
            .runtime()?;
            log::info!("correction model: {} trees", model.model.trees.len());
            let out = model.predict(&yhat, a, ts.as_deref(), start).runtime()?;
            // Pad so the slicing below treats every method alike.
            Matrix64::zeros(start, h.n_series()).vstack(&out).runtime()?
        }
    };
    let rows: Vec<usize> = (start..n).collect();
    let out = out_full.select_rows(&rows);

    let worst = h.consistency_error(&out).runtime()?;
    let tol = 1e-9 * out.max_abs().max(1.0);
    if worst > tol {
        return Err(anyhow!("reconciled output violates aggregation by {worst:e} (tolerance {tol:e})")).runtime();
    }
    let ts = fc.timestamps.as_ref().map(|t| t[start..].to_vec());
    write_table(&args.out, &h.names, ts.as_deref(), &out).runtime()?;

    if let Some(p) = &args.summary {
        let mut doc = json!({
            "method": format!("{:?}", args.method).to_lowercase(),
            "rows": out.rows(),
            "consistency_error": worst,
        });
        if let Some(a) = &actuals {
            let a = a.select_rows(&rows);
            let bu = bu.select_rows(&rows);
            if out.rows() > 0 {
                let rmse = metrics::point_metrics(&a, &out).runtime()?.rmse;
                let rmse_bu = metrics::point_metrics(&a, &bu).runtime()?.rmse;
                doc["rmse"] = json!(rmse);
                doc["rmse_bottom_up"] = json!(rmse_bu);
                doc["relative_to_bottom_up"] = json!(if rmse_bu > 0.0 { rmse / rmse_bu } else { f64::NAN });
                doc["rmse_per_series"] = json!(metrics::rmse_per_column(&a, &out).runtime()?);
            }
        }
        write_text(p, &(serde_json::to_string_pretty(&doc).expect("json") + "\n")).runtime()?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(short, long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Test window length as a fraction of the training window.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub lags: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub calendar: bool,
    /// Per-fold metrics CSV.
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn cv(args: &CvArgs) -> CmdResult {
    let mut cfg = resolved_config(Some(&args.config), args.lags.as_deref(), args.horizon, args.calendar)?;
    let (_, ds) = load_training_data(&mut cfg, &args.config, &args.data)?;
    let boost = cfg.boost_config(ds.n_targets(), &base_dir(&args.config)).input()?;
    let splits = sliding_window_cv(ds.n_rows(), args.folds, args.test_fraction).input()?;
    let mut wtr = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .runtime()?;
    wtr.write_record(["fold", "metric", "horizon", "tau", "value"]).runtime()?;
    for s in &splits {
        let train = ds.slice_rows(s.train.clone());
        let test = ds.slice_rows(s.test.clone());
        let model = Model64::fit(&train, &boost)
            .with_context(|| format!("fold {}", s.fold))
            .runtime()?;
        let yhat = model.predict_dataset(&test).runtime()?;
        let records: Vec<MetricRecord> = match (&boost.spec.taus, boost.spec.kind.is_quantile()) {
            (Some(taus), true) => metrics::quantile_records(&test.y, &yhat, taus, None).runtime()?,
            _ => metrics::point_records(&test.y, &yhat).runtime()?,
        };
        log::info!(
            "fold {}: train {:?}, test {:?}, {} trees",
            s.fold,
            s.train,
            s.test,
            model.trees.len()
        );
        for r in &records {
            wtr.write_record([
                s.fold.to_string(),
                r.metric.clone(),
                r.horizon.map(|h| h.to_string()).unwrap_or_default(),
                r.tau.map(|t| t.to_string()).unwrap_or_default(),
                r.value.to_string(),
            ])
            .runtime()?;
        }
    }
    wtr.flush().runtime()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_header_layout() {
        let h: Vec<String> = ["a@0.1", "a@0.9", "b@0.1", "b@0.9"].iter().map(|s| s.to_string()).collect();
        let (t, q) = parse_quantile_headers(&h).unwrap();
        assert_eq!(t, vec!["a", "b"]);
        assert_eq!(q, vec![0.1, 0.9]);
        let bad: Vec<String> = ["a@0.1", "b@0.1", "a@0.9", "b@0.9"].iter().map(|s| s.to_string()).collect();
        assert!(parse_quantile_headers(&bad).is_err());
        assert!(parse_quantile_headers(&["a".to_string()]).is_err());
    }
}
