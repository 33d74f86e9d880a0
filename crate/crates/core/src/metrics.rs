//! Point and probabilistic forecast metrics.
//!
//! Quantile forecasts are `N × (n_t·n_q)` matrices in target-major order:
//! column `t·n_q + q` holds horizon `t` at level `τ_q`.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, mismatch, Result};
use crate::linalg::Matrix;
use crate::lossresp::pinball_loss;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PointMetrics {
    pub rmse: f64,
    pub mape: f64,
    /// Entries left out of the MAPE because the target is zero.
    pub mape_excluded: usize,
}

fn same_shape<T: Scalar>(y: &Matrix<T>, yhat: &Matrix<T>) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(mismatch(
            "prediction shape",
            format!("{:?}", y.shape()),
            format!("{:?}", yhat.shape()),
        ));
    }
    Ok(())
}

fn point_over<T: Scalar>(pairs: impl Iterator<Item = (T, T)>) -> Result<PointMetrics> {
    let (mut se, mut n, mut ape, mut m, mut excluded) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for (a, b) in pairs {
        let (a, b) = (a.as_f64(), b.as_f64());
        let e = a - b;
        se += e * e;
        n += 1;
        if a == 0.0 {
            excluded += 1;
        } else {
            ape += (e / a).abs();
            m += 1;
        }
    }
    if n == 0 {
        return Err(invalid("y", "no entries to score"));
    }
    if m == 0 {
        return Err(invalid("y", "MAPE undefined: every target is zero"));
    }
    Ok(PointMetrics {
        rmse: (se / n as f64).sqrt(),
        mape: ape / m as f64,
        mape_excluded: excluded,
    })
}

/// RMSE and MAPE over all entries.
pub fn point_metrics<T: Scalar>(y: &Matrix<T>, yhat: &Matrix<T>) -> Result<PointMetrics> {
    same_shape(y, yhat)?;
    point_over(y.as_slice().iter().copied().zip(yhat.as_slice().iter().copied()))
}

/// [`point_metrics`] per column (horizon).
pub fn point_metrics_per_column<T: Scalar>(y: &Matrix<T>, yhat: &Matrix<T>) -> Result<Vec<PointMetrics>> {
    same_shape(y, yhat)?;
    (0..y.cols())
        .map(|c| point_over((0..y.rows()).map(|i| (y[(i, c)], yhat[(i, c)]))))
        .collect()
}

/// RMSE per column; unlike [`point_metrics_per_column`] zero targets are fine.
pub fn rmse_per_column<T: Scalar>(y: &Matrix<T>, yhat: &Matrix<T>) -> Result<Vec<f64>> {
    same_shape(y, yhat)?;
    let n = y.rows().max(1) as f64;
    Ok((0..y.cols())
        .map(|c| {
            let se: f64 = (0..y.rows())
                .map(|i| (y[(i, c)] - yhat[(i, c)]).as_f64().powi(2))
                .sum();
            (se / n).sqrt()
        })
        .collect())
}

fn check_quantiles<T: Scalar>(y: &Matrix<T>, qhat: &Matrix<T>, taus: &[T]) -> Result<()> {
    if taus.is_empty() {
        return Err(invalid("taus", "must be non-empty"));
    }
    if qhat.rows() != y.rows() || qhat.cols() != y.cols() * taus.len() {
        return Err(mismatch(
            "quantile forecast shape",
            format!("{}×{}", y.rows(), y.cols() * taus.len()),
            format!("{}×{}", qhat.rows(), qhat.cols()),
        ));
    }
    Ok(())
}

/// Time-averaged pinball loss, `n_q × n_t` (row `q`, column horizon `t`).
pub fn avg_quantile_loss<T: Scalar>(y: &Matrix<T>, qhat: &Matrix<T>, taus: &[T]) -> Result<Matrix<f64>> {
    check_quantiles(y, qhat, taus)?;
    let (n, n_t, n_q) = (y.rows(), y.cols(), taus.len());
    let mut out = Matrix::zeros(n_q, n_t);
    for i in 0..n {
        for t in 0..n_t {
            for (q, &tau) in taus.iter().enumerate() {
                out[(q, t)] += pinball_loss(y[(i, t)] - qhat[(i, t * n_q + q)], tau).as_f64();
            }
        }
    }
    Ok(if n > 0 { out.scale(1.0 / n as f64) } else { out })
}

/// Spacing of an equispaced τ grid.
pub fn tau_spacing<T: Scalar>(taus: &[T]) -> Result<f64> {
    if taus.len() < 2 {
        return Err(invalid("taus", "need at least two levels for a spacing"));
    }
    let t: Vec<f64> = taus.iter().map(|v| v.as_f64()).collect();
    let d = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let tol = 1e-6 * d.abs().max(f64::EPSILON);
    if !(d > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - d).abs() > tol) {
        return Err(invalid("taus", "quantile score needs strictly increasing equispaced levels"));
    }
    Ok(d)
}

/// Quantile score per horizon: `dτ·Σ_τ l̄_q`.
pub fn quantile_score<T: Scalar>(y: &Matrix<T>, qhat: &Matrix<T>, taus: &[T]) -> Result<Vec<f64>> {
    let d = tau_spacing(taus)?;
    let l = avg_quantile_loss(y, qhat, taus)?;
    Ok((0..l.cols())
        .map(|t| d * (0..l.rows()).map(|q| l[(q, t)]).sum::<f64>())
        .collect())
}

/// Observed coverage `(1/N)·Σ 𝟙{y < q̂_τ}`, `n_q × n_t`.
pub fn reliability<T: Scalar>(y: &Matrix<T>, qhat: &Matrix<T>, taus: &[T]) -> Result<Matrix<f64>> {
    check_quantiles(y, qhat, taus)?;
    let (n, n_t, n_q) = (y.rows(), y.cols(), taus.len());
    let mut out = Matrix::zeros(n_q, n_t);
    for i in 0..n {
        for t in 0..n_t {
            for q in 0..n_q {
                if y[(i, t)] < qhat[(i, t * n_q + q)] {
                    out[(q, t)] += 1.0;
                }
            }
        }
    }
    Ok(if n > 0 { out.scale(1.0 / n as f64) } else { out })
}

/// Coverage pooled over horizons, one value per τ.
pub fn reliability_pooled(rel: &Matrix<f64>) -> Vec<f64> {
    (0..rel.rows())
        .map(|q| rel.row(q).iter().sum::<f64>() / rel.cols().max(1) as f64)
        .collect()
}

/// Reliability skill `|r_bench − τ| − |r_model − τ|`; positive favours the model.
pub fn reliability_skill<T: Scalar>(model: &Matrix<f64>, bench: &Matrix<f64>, taus: &[T]) -> Result<Matrix<f64>> {
    if model.shape() != bench.shape() || model.rows() != taus.len() {
        return Err(mismatch(
            "reliability shapes",
            format!("{:?}", model.shape()),
            format!("{:?}", bench.shape()),
        ));
    }
    Ok(Matrix::from_fn(model.rows(), model.cols(), |q, t| {
        let tau = taus[q].as_f64();
        (bench[(q, t)] - tau).abs() - (model[(q, t)] - tau).abs()
    }))
}

/// Mean crossing per horizon: fraction of rows and adjacent τ pairs with
/// `q̂_{τ_i} > q̂_{τ_{i+1}}`.
pub fn crossing_rate_per_horizon<T: Scalar>(qhat: &Matrix<T>, n_q: usize) -> Result<Vec<f64>> {
    if n_q < 2 {
        return Err(invalid("taus", "crossing needs at least two quantiles"));
    }
    if !qhat.cols().is_multiple_of(n_q) {
        return Err(invalid("qhat", format!("{} columns is not a multiple of {n_q}", qhat.cols())));
    }
    let n_t = qhat.cols() / n_q;
    let denom = (qhat.rows() * (n_q - 1)).max(1) as f64;
    Ok((0..n_t)
        .map(|t| {
            let mut c = 0usize;
            for i in 0..qhat.rows() {
                let r = &qhat.row(i)[t * n_q..(t + 1) * n_q];
                c += r.windows(2).filter(|w| w[0] > w[1]).count();
            }
            c as f64 / denom
        })
        .collect())
}

/// Mean crossing `χ̄` over rows, horizons and adjacent τ pairs.
pub fn crossing_rate<T: Scalar>(qhat: &Matrix<T>, n_q: usize) -> Result<f64> {
    let per = crossing_rate_per_horizon(qhat, n_q)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// One row of the flat metrics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub metric: String,
    pub horizon: Option<usize>,
    pub tau: Option<f64>,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(metric: &str, horizon: Option<usize>, tau: Option<f64>, value: f64) -> Self {
        Self {
            metric: metric.to_string(),
            horizon,
            tau,
            value,
        }
    }
}

/// Point metrics as records: pooled (no horizon) and per horizon.
pub fn point_records<T: Scalar>(y: &Matrix<T>, yhat: &Matrix<T>) -> Result<Vec<MetricRecord>> {
    let all = point_metrics(y, yhat)?;
    let mut out = vec![
        MetricRecord::new("rmse", None, None, all.rmse),
        MetricRecord::new("mape", None, None, all.mape),
        MetricRecord::new("mape_excluded", None, None, all.mape_excluded as f64),
    ];
    for (t, r) in rmse_per_column(y, yhat)?.into_iter().enumerate() {
        out.push(MetricRecord::new("rmse", Some(t), None, r));
    }
    Ok(out)
}

/// Quantile metrics as records; `bench` adds reliability skill.
pub fn quantile_records<T: Scalar>(
    y: &Matrix<T>,
    qhat: &Matrix<T>,
    taus: &[T],
    bench: Option<&Matrix<T>>,
) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    let tau_f = |q: usize| Some(taus[q].as_f64());
    let l = avg_quantile_loss(y, qhat, taus)?;
    for q in 0..l.rows() {
        for t in 0..l.cols() {
            out.push(MetricRecord::new("avg_quantile_loss", Some(t), tau_f(q), l[(q, t)]));
        }
    }
    if taus.len() >= 2 {
        for (t, v) in quantile_score(y, qhat, taus)?.into_iter().enumerate() {
            out.push(MetricRecord::new("quantile_score", Some(t), None, v));
        }
        for (t, v) in crossing_rate_per_horizon(qhat, taus.len())?.into_iter().enumerate() {
            out.push(MetricRecord::new("crossing_rate", Some(t), None, v));
        }
        out.push(MetricRecord::new("crossing_rate", None, None, crossing_rate(qhat, taus.len())?));
    }
    let rel = reliability(y, qhat, taus)?;
    for q in 0..rel.rows() {
        for t in 0..rel.cols() {
            out.push(MetricRecord::new("reliability", Some(t), tau_f(q), rel[(q, t)]));
        }
    }
    for (q, v) in reliability_pooled(&rel).into_iter().enumerate() {
        out.push(MetricRecord::new("reliability", None, tau_f(q), v));
    }
    if let Some(b) = bench {
        let rb = reliability(y, b, taus)?;
        let rs = reliability_skill(&rel, &rb, taus)?;
        for q in 0..rs.rows() {
            for t in 0..rs.cols() {
                out.push(MetricRecord::new("reliability_skill", Some(t), tau_f(q), rs[(q, t)]));
            }
        }
    }
    Ok(out)
}

/// Writes records as CSV with header `metric,horizon,tau,value`.
pub fn write_metrics_csv<W: Write>(records: &[MetricRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Pretty JSON array of the records.
pub fn metrics_json(records: &[MetricRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}
