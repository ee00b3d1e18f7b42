//! Model-pool tables: one row per checkpoint, hyperparameters followed by
//! detection metrics. Stored as RFC-4180 CSV with a header row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Required leading columns, in canonical order.
pub const HYPER_COLUMNS: [&str; 6] = ["wd", "aug", "do", "adapt_lr", "pre_acc", "ft_acc"];

#[derive(Debug, Clone, PartialEq)]
pub struct PoolRow {
    pub wd: f64,
    pub aug: String,
    pub dropout: f64,
    pub adapt_lr: f64,
    pub pre_acc: f64,
    pub ft_acc: f64,
    /// Values of [`PoolTable::metric_columns`], same order.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Num(f64),
    Text(&'a str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolTable {
    metric_columns: Vec<String>,
    rows: Vec<PoolRow>,
}

fn normalize_header(h: &str) -> String {
    h.trim().replace('-', "_")
}

fn is_percent_column(name: &str) -> bool {
    matches!(name, "pre_acc" | "ft_acc") || name.ends_with("_fpr") || name.ends_with("_auc")
}

impl PoolTable {
    pub fn new(metric_columns: Vec<String>, rows: Vec<PoolRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.metrics.len() != metric_columns.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} metrics for {} metric columns",
                    row.metrics.len(),
                    metric_columns.len()
                )));
            }
        }
        let table = PoolTable { metric_columns, rows };
        table.check_ranges()?;
        Ok(table)
    }

    fn check_ranges(&self) -> Result<()> {
        for (i, _) in self.rows.iter().enumerate() {
            for col in self.columns() {
                if !is_percent_column(col) {
                    continue;
                }
                if let Cell::Num(v) = self.cell(i, col)? {
                    if !(0.0..=100.0).contains(&v) {
                        return Err(Error::OutOfRange { column: col.to_string(), row: i, value: v });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[PoolRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn metric_columns(&self) -> &[String] {
        &self.metric_columns
    }

    /// All column names: hyperparameters first, then metrics.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        HYPER_COLUMNS.iter().copied().chain(self.metric_columns.iter().map(String::as_str))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns().any(|c| c == name)
    }

    pub fn require_column(&self, name: &str) -> Result<()> {
        if self.has_column(name) {
            Ok(())
        } else {
            Err(Error::UnknownColumn(name.to_string()))
        }
    }

    pub fn cell(&self, row: usize, column: &str) -> Result<Cell<'_>> {
        let r = self
            .rows
            .get(row)
            .ok_or_else(|| Error::InvalidArgument(format!("row {row} out of range")))?;
        Ok(match column {
            "wd" => Cell::Num(r.wd),
            "aug" => Cell::Text(&r.aug),
            "do" => Cell::Num(r.dropout),
            "adapt_lr" => Cell::Num(r.adapt_lr),
            "pre_acc" => Cell::Num(r.pre_acc),
            "ft_acc" => Cell::Num(r.ft_acc),
            other => {
                let idx = self
                    .metric_columns
                    .iter()
                    .position(|c| c == other)
                    .ok_or_else(|| Error::UnknownColumn(other.to_string()))?;
                Cell::Num(r.metrics[idx])
            }
        })
    }

    /// Numeric values of one column, in row order.
    pub fn numeric_column(&self, column: &str) -> Result<Vec<f64>> {
        self.require_column(column)?;
        (0..self.rows.len())
            .map(|i| match self.cell(i, column)? {
                Cell::Num(v) => Ok(v),
                Cell::Text(_) => Err(Error::InvalidArgument(format!("column `{column}` is not numeric"))),
            })
            .collect()
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PoolTable {
        PoolTable {
            metric_columns: self.metric_columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

pub fn parse_pool_table<R: Read>(input: R) -> Result<PoolTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(Error::MissingHeader),
    };
    let names: Vec<String> = header.iter().map(normalize_header).collect();
    if names.iter().all(|n| n.is_empty()) {
        return Err(Error::MissingHeader);
    }
    let mut hyper_idx = [0usize; 6];
    for (slot, want) in hyper_idx.iter_mut().zip(HYPER_COLUMNS) {
        *slot = names.iter().position(|n| n == want).ok_or_else(|| Error::MissingColumn(want.into()))?;
    }
    let metric_idx: Vec<usize> = (0..names.len()).filter(|i| !hyper_idx.contains(i)).collect();
    let metric_columns: Vec<String> = metric_idx.iter().map(|&i| names[i].clone()).collect();

    let mut rows = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::ParseNumber {
                column: names[i].clone(),
                row,
                value: raw.to_string(),
            })
        };
        rows.push(PoolRow {
            wd: num(hyper_idx[0])?,
            aug: rec.get(hyper_idx[1]).unwrap_or("").to_string(),
            dropout: num(hyper_idx[2])?,
            adapt_lr: num(hyper_idx[3])?,
            pre_acc: num(hyper_idx[4])?,
            ft_acc: num(hyper_idx[5])?,
            metrics: metric_idx.iter().map(|&i| num(i)).collect::<Result<_>>()?,
        });
    }
    PoolTable::new(metric_columns, rows)
}

pub fn read_pool_table(path: impl AsRef<Path>) -> Result<PoolTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pool_table(file)
}

/// Writes the table in canonical column order; numbers use the shortest
/// representation that parses back to the same value.
pub fn write_pool_table<W: Write>(table: &PoolTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.columns())?;
    for r in table.rows() {
        let mut rec = vec![
            r.wd.to_string(),
            r.aug.clone(),
            r.dropout.to_string(),
            r.adapt_lr.to_string(),
            r.pre_acc.to_string(),
            r.ft_acc.to_string(),
        ];
        rec.extend(r.metrics.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
