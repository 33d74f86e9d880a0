use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDateTime;
use mbt::Matrix64;

/// A numeric CSV table with an optional timestamp column kept as text.
#[derive(Clone, Debug)]
pub struct Table {
    pub headers: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub data: Matrix64,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.data.rows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Columns in the order of `names`.
    pub fn select(&self, names: &[String]) -> Result<Matrix64> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| anyhow!("missing column `{n}`")))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.data.select_cols(&idx))
    }

    pub fn has_all(&self, names: &[String]) -> bool {
        names.iter().all(|n| self.column_index(n).is_some())
    }
}

/// Reads a CSV of numbers. A column named `timestamp_col` is kept aside as
/// text. A zero-byte file reads as an empty table.
pub fn read_table(path: &Path, timestamp_col: Option<&str>) -> Result<Table> {
    let meta = std::fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.len() == 0 {
        return Ok(Table {
            headers: Vec::new(),
            timestamps: None,
            data: Matrix64::zeros(0, 0),
        });
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let all: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let ts_idx = timestamp_col.and_then(|c| all.iter().position(|h| h == c));
    let keep: Vec<usize> = (0..all.len()).filter(|&i| Some(i) != ts_idx).collect();
    let mut data = Vec::new();
    let mut ts = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        for &c in &keep {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                anyhow!(
                    "{}: line {line}, column `{}`: `{cell}` is not a number",
                    path.display(),
                    all[c]
                )
            })?;
            data.push(v);
        }
        if let Some(c) = ts_idx {
            ts.push(rec.get(c).unwrap_or("").to_string());
        }
        rows += 1;
    }
    Ok(Table {
        headers: keep.iter().map(|&i| all[i].clone()).collect(),
        timestamps: ts_idx.map(|_| ts),
        data: Matrix64::from_vec(rows, keep.len(), data)?,
    })
}

/// True when the file has no data rows (zero bytes or only a header).
pub fn has_no_rows(path: &Path) -> Result<bool> {
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(true);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.records().next().is_none())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Writes `data` under `headers`, with a leading `timestamp` column when given.
pub fn write_table(path: &Path, headers: &[String], timestamps: Option<&[String]>, data: &Matrix64) -> Result<()> {
    if headers.len() != data.cols() {
        bail!("{} headers for {} columns", headers.len(), data.cols());
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let ts_header = timestamps.map(|_| "timestamp".to_string());
    wtr.write_record(ts_header.iter().chain(headers))?;
    for i in 0..data.rows() {
        let mut rec: Vec<String> = Vec::with_capacity(data.cols() + 1);
        if let Some(ts) = timestamps {
            rec.push(ts[i].clone());
        }
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
