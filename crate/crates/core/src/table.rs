//! Row-keyed score tables and their CSV encodings.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Metric, MetricReport};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("row {row:?} has {got} values, table has {expected} columns")]
    Width { row: CaseKey, expected: usize, got: usize },
    #[error("duplicate row {0:?}")]
    DuplicateRow(CaseKey),
    #[error("row {row:?} is missing column {column}")]
    MissingCell { row: CaseKey, column: String },
    #[error("unknown column {0}")]
    UnknownColumn(String),
}

pub type Result<T> = std::result::Result<T, TableError>;

/// Identifies one evaluated segmentation channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseKey {
    pub exam: String,
    pub method: String,
    pub channel: String,
}

impl CaseKey {
    pub fn new(exam: impl Into<String>, method: impl Into<String>, channel: impl Into<String>) -> Self {
        CaseKey {
            exam: exam.into(),
            method: method.into(),
            channel: channel.into(),
        }
    }
}

/// Rectangular table of scores, one row per case, one column per score.
/// Non-finite cells mark invalid values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    columns: Vec<String>,
    rows: Vec<CaseKey>,
    values: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(columns: Vec<String>) -> Self {
        ScoreTable {
            columns,
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, key: CaseKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(TableError::Width {
                row: key,
                expected: self.columns.len(),
                got: values.len(),
            });
        }
        if self.rows.contains(&key) {
            return Err(TableError::DuplicateRow(key));
        }
        self.rows.push(key);
        self.values.push(values);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[CaseKey] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Keep only the rows for which `keep` is true.
    pub fn filter_rows(&self, keep: impl Fn(&CaseKey) -> bool) -> ScoreTable {
        let mut out = ScoreTable::new(self.columns.clone());
        for (k, v) in self.rows.iter().zip(&self.values) {
            if keep(k) {
                out.rows.push(k.clone());
                out.values.push(v.clone());
            }
        }
        out
    }

    /// Keep the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<ScoreTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| TableError::UnknownColumn(n.clone())))
            .collect::<Result<_>>()?;
        Ok(ScoreTable {
            columns: names.to_vec(),
            rows: self.rows.clone(),
            values: self.values.iter().map(|r| idx.iter().map(|j| r[*j]).collect()).collect(),
        })
    }

    /// Rows whose cells are all finite.
    pub fn complete_rows(&self) -> ScoreTable {
        let mut out = ScoreTable::new(self.columns.clone());
        for (k, v) in self.rows.iter().zip(&self.values) {
            if v.iter().all(|x| x.is_finite()) {
                out.rows.push(k.clone());
                out.values.push(v.clone());
            }
        }
        out
    }
}

fn long_rows(
    reader: impl Read,
    header: &[&str],
) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(TableError::Parse {
            line: 1,
            message: format!("expected header {}, got {}", header.join(","), got.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

/// Pivot long-format records `(key, column, value)` into a table, keeping the
/// first-seen order of rows and columns.
fn pivot(cells: Vec<(CaseKey, String, f64)>) -> Result<ScoreTable> {
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<CaseKey> = Vec::new();
    let mut map = std::collections::HashMap::new();
    for (key, col, v) in cells {
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        if !rows.contains(&key) {
            rows.push(key.clone());
        }
        map.insert((key, col), v);
    }
    let mut table = ScoreTable::new(columns.clone());
    for key in rows {
        let mut vals = Vec::with_capacity(columns.len());
        for c in &columns {
            match map.get(&(key.clone(), c.clone())) {
                Some(v) => vals.push(*v),
                None => {
                    return Err(TableError::MissingCell {
                        row: key,
                        column: c.clone(),
                    })
                }
            }
        }
        table.push_row(key, vals)?;
    }
    Ok(table)
}

pub const METRIC_HEADER: [&str; 6] = ["exam", "method", "channel", "metric", "value", "valid"];
pub const LOSS_HEADER: [&str; 6] = ["exam", "method", "channel", "loss_id", "params_hash", "value"];

/// Write metric reports in long format. Invalid values have an empty value cell.
pub fn write_metric_csv(out: impl Write, reports: &[(CaseKey, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_HEADER)?;
    for (key, report) in reports {
        for (metric, v) in report.iter() {
            let value = v.get().map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                key.exam.as_str(),
                &key.method,
                &key.channel,
                metric.abbrev(),
                &value,
                if v.valid { "true" } else { "false" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a long-format metric CSV into a table with one column per metric.
/// Invalid cells become NaN.
pub fn read_metric_csv(input: impl Read) -> Result<ScoreTable> {
    let mut cells = Vec::new();
    for (line, rec) in long_rows(input, &METRIC_HEADER)? {
        let bad = |message: String| TableError::Parse { line, message };
        let metric: Metric = rec[3].parse().map_err(|e: crate::metrics::MetricError| bad(e.to_string()))?;
        let valid = match &rec[5] {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("valid must be true or false, got '{other}'"))),
        };
        let value = if valid {
            rec[4].parse::<f64>().map_err(|_| bad(format!("bad value '{}'", &rec[4])))?
        } else {
            f64::NAN
        };
        cells.push((CaseKey::new(&rec[0], &rec[1], &rec[2]), metric.abbrev().to_string(), value));
    }
    pivot(cells)
}

/// Write a score table in the loss long format; `hashes[j]` fills the
/// `params_hash` cell of column `j`.
pub fn write_loss_csv(out: impl Write, table: &ScoreTable, hashes: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_HEADER)?;
    for (i, key) in table.rows().iter().enumerate() {
        for (j, col) in table.columns().iter().enumerate() {
            w.write_record([
                key.exam.as_str(),
                &key.method,
                &key.channel,
                col,
                &hashes[j],
                &table.get(i, j).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a loss CSV into a table with one column per `loss_id` label, plus the
/// parameter hash of each column.
pub fn read_loss_csv(input: impl Read) -> Result<(ScoreTable, Vec<String>)> {
    let mut cells = Vec::new();
    let mut hashes: Vec<(String, String)> = Vec::new();
    for (line, rec) in long_rows(input, &LOSS_HEADER)? {
        let value: f64 = rec[5].parse().map_err(|_| TableError::Parse {
            line,
            message: format!("bad value '{}'", &rec[5]),
        })?;
        let col = rec[3].to_string();
        match hashes.iter().find(|(c, _)| *c == col) {
            Some((_, h)) if h != &rec[4] => {
                return Err(TableError::Parse {
                    line,
                    message: format!("column {col} has two parameter hashes"),
                })
            }
            Some(_) => {}
            None => hashes.push((col.clone(), rec[4].to_string())),
        }
        cells.push((CaseKey::new(&rec[0], &rec[1], &rec[2]), col, value));
    }
    let table = pivot(cells)?;
    let hashes = table
        .columns()
        .iter()
        .map(|c| hashes.iter().find(|(k, _)| k == c).map(|(_, h)| h.clone()).unwrap_or_default())
        .collect();
    Ok((table, hashes))
}
