use std::collections::HashMap;
use std::path::Path;

use crate::datapipe::schema::{ColumnKind, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    /// Categorical view of the cell; numbers are rendered with `Display`.
    pub fn as_text(&self) -> String {
        match self {
            Cell::Num(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub type Row = Vec<Option<Cell>>;

/// Parsed CSV contents laid out in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<Row>,
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == "NaN"
}

fn parse_cell(raw: &str, kind: ColumnKind) -> Option<Cell> {
    if is_missing(raw) {
        return None;
    }
    let t = raw.trim();
    match kind {
        ColumnKind::Numeric => t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Cell::Num),
        _ => Some(Cell::Text(t.to_string())),
    }
}

/// Reads a CSV file into a [`RawTable`].
///
/// With `schema.header` set, CSV columns are matched to schema columns by
/// name regardless of order. Without a header the CSV must have exactly the
/// schema's columns in schema order (the NSL-KDD distribution files ship
/// this way).
pub fn load_table(path: &Path, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(false)
        .from_path(path)
        .map_err(csv_err)?;

    let positions: Vec<usize> = if schema.header {
        let header = reader.headers().map_err(csv_err)?.clone();
        let by_name: HashMap<&str, usize> =
            header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let missing: Vec<&str> = schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .filter(|n| !by_name.contains_key(n))
            .collect();
        let extra: Vec<&str> = header
            .iter()
            .map(str::trim)
            .filter(|h| !schema.columns.iter().any(|c| c.name == *h))
            .collect();
        if !missing.is_empty() || !extra.is_empty() || header.len() != schema.columns.len() {
            return Err(Error::HeaderMismatch(format!(
                "missing from csv: {missing:?}; not in schema: {extra:?}"
            )));
        }
        schema.columns.iter().map(|c| by_name[c.name.as_str()]).collect()
    } else {
        (0..schema.columns.len()).collect()
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if record.len() != schema.columns.len() {
            return Err(Error::HeaderMismatch(format!(
                "record has {} fields, schema has {} columns",
                record.len(),
                schema.columns.len()
            )));
        }
        let row = schema
            .columns
            .iter()
            .zip(&positions)
            .map(|(col, &pos)| parse_cell(&record[pos], col.kind))
            .collect();
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable(path.to_path_buf()));
    }
    Ok(RawTable { schema: schema.clone(), rows })
}

impl RawTable {
    pub fn new(schema: Schema, rows: Vec<Row>) -> Result<Self> {
        schema.validate()?;
        if let Some(bad) = rows.iter().find(|r| r.len() != schema.columns.len()) {
            return Err(Error::DimensionMismatch { expected: schema.columns.len(), got: bad.len() });
        }
        Ok(RawTable { schema, rows })
    }

    /// Concatenates tables that share a schema (e.g. a train and a test file).
    pub fn concat(tables: Vec<RawTable>) -> Result<RawTable> {
        let mut iter = tables.into_iter();
        let mut first = iter.next().ok_or_else(|| Error::InvalidArgument("no tables to merge".into()))?;
        for t in iter {
            if t.schema.columns != first.schema.columns {
                return Err(Error::Schema("cannot merge tables with different schemas".into()));
            }
            first.rows.extend(t.rows);
        }
        Ok(first)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of missing feature cells in a row (label and dropped columns excluded).
    pub fn missing_fraction(&self, row: &Row) -> f64 {
        let mut total = 0usize;
        let mut missing = 0usize;
        for (cell, col) in row.iter().zip(&self.schema.columns) {
            if col.kind.is_feature() {
                total += 1;
                if cell.is_none() {
                    missing += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            missing as f64 / total as f64
        }
    }

    /// Whether a row survives row-drop filtering: it has a label and its
    /// missing fraction does not exceed `threshold`.
    pub fn keeps_row(&self, row: &Row, threshold: f64) -> bool {
        row[self.schema.label_index()].is_some() && self.missing_fraction(row) <= threshold
    }

    pub fn retained(&self, threshold: f64) -> RawTable {
        let rows = self.rows.iter().filter(|r| self.keeps_row(r, threshold)).cloned().collect();
        RawTable { schema: self.schema.clone(), rows }
    }

    pub fn select(&self, indices: &[usize]) -> RawTable {
        RawTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Mapped label of every row; `None` where the label cell is missing.
    pub fn mapped_labels(&self) -> Vec<Option<String>> {
        let li = self.schema.label_index();
        self.rows
            .iter()
            .map(|r| r[li].as_ref().map(|c| self.schema.map_label(&c.as_text()).to_string()))
            .collect()
    }
}
