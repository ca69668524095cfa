//! Fitted preprocessing: imputation, categorical encoding, z-score scaling.
//!
//! Output columns are laid out in schema order. A numeric column yields one
//! standardized output; an ordinal column yields one standardized output
//! holding the category's rank; a nominal column yields one 0/1 indicator per
//! category observed at fit time (categories sorted). Indicator columns are
//! not rescaled, so each block sums to 1 for a known category.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapipe::dataset::Dataset;
use crate::datapipe::schema::{ColumnKind, ColumnSchema, Schema};
use crate::datapipe::table::{Cell, RawTable};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenCategory {
    Error,
    AllZeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessPolicy {
    pub impute_numeric: Imputation,
    pub row_drop_threshold: f64,
    pub unseen_category: UnseenCategory,
}

impl Default for PreprocessPolicy {
    fn default() -> Self {
        PreprocessPolicy {
            impute_numeric: Imputation::Mean,
            row_drop_threshold: 0.5,
            unseen_category: UnseenCategory::AllZeros,
        }
    }
}

impl PreprocessPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.row_drop_threshold) {
            return Err(Error::InvalidArgument(format!(
                "row_drop_threshold must be in [0, 1], got {}",
                self.row_drop_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum ColumnEncoder {
    Numeric { column: usize, impute: f64 },
    OneHot { column: usize, categories: Vec<String>, impute: String },
    Ordinal { column: usize, order: Vec<String>, impute: String },
}

impl ColumnEncoder {
    pub fn column(&self) -> usize {
        match self {
            ColumnEncoder::Numeric { column, .. }
            | ColumnEncoder::OneHot { column, .. }
            | ColumnEncoder::Ordinal { column, .. } => *column,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnEncoder::OneHot { categories, .. } => categories.len(),
            _ => 1,
        }
    }
}

/// Mean and standard deviation of one standardized output column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    columns: Vec<ColumnSchema>,
    policy: PreprocessPolicy,
    encoders: Vec<ColumnEncoder>,
    label_column: usize,
    label_map: BTreeMap<String, String>,
    label_default: Option<String>,
    class_names: Vec<String>,
    /// One entry per output column; `None` for one-hot indicators.
    scales: Vec<Option<ColumnScale>>,
    output_feature_names: Vec<String>,
    /// Raw column each output column was derived from.
    source_columns: Vec<usize>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population mean and standard deviation (divisor n).
pub fn population_stats(values: &[f64]) -> (f64, f64) {
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    (mu, var.sqrt())
}

/// Most frequent category; ties go to the one that sorts first.
fn mode(values: &[String]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (k, c) in counts {
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.to_string())
}

impl Preprocessor {
    /// Fits on `table`, taking the class list from the schema if it names
    /// one, else from the distinct labels in `table`.
    pub fn fit(table: &RawTable, policy: PreprocessPolicy) -> Result<Self> {
        Self::fit_with_classes(table, policy, table.schema.classes.clone())
    }

    pub fn fit_with_classes(
        table: &RawTable,
        policy: PreprocessPolicy,
        classes: Option<Vec<String>>,
    ) -> Result<Self> {
        policy.validate()?;
        let table = table.retained(policy.row_drop_threshold);
        if table.is_empty() {
            return Err(Error::InvalidArgument("no rows left after row-drop filtering".into()));
        }
        let schema = &table.schema;

        let class_names = match classes {
            Some(c) => c,
            None => {
                let set: BTreeSet<String> = table.mapped_labels().into_iter().flatten().collect();
                set.into_iter().collect()
            }
        };
        if class_names.is_empty() {
            return Err(Error::InvalidArgument("no classes observed".into()));
        }

        let mut encoders = Vec::new();
        for (ci, col) in schema.columns.iter().enumerate() {
            let observed = table.rows.iter().filter_map(|r| r[ci].as_ref());
            match col.kind {
                ColumnKind::Numeric => {
                    let vals: Vec<f64> = observed.filter_map(Cell::as_num).collect();
                    if vals.is_empty() {
                        return Err(Error::AllMissing(col.name.clone()));
                    }
                    let impute = match policy.impute_numeric {
                        Imputation::Mean => mean(&vals),
                        Imputation::Median => median(&vals),
                    };
                    encoders.push(ColumnEncoder::Numeric { column: ci, impute });
                }
                ColumnKind::Nominal => {
                    let vals: Vec<String> = observed.map(Cell::as_text).collect();
                    let impute = mode(&vals).ok_or_else(|| Error::AllMissing(col.name.clone()))?;
                    let categories: BTreeSet<String> = vals.into_iter().collect();
                    encoders.push(ColumnEncoder::OneHot {
                        column: ci,
                        categories: categories.into_iter().collect(),
                        impute,
                    });
                }
                ColumnKind::Ordinal => {
                    let order = col.ordinal_order.clone().unwrap_or_default();
                    let vals: Vec<String> = observed.map(Cell::as_text).collect();
                    if let Some(bad) = vals.iter().find(|v| !order.contains(v)) {
                        return Err(Error::UnknownCategory { column: col.name.clone(), value: bad.clone() });
                    }
                    let impute = mode(&vals).ok_or_else(|| Error::AllMissing(col.name.clone()))?;
                    encoders.push(ColumnEncoder::Ordinal { column: ci, order, impute });
                }
                ColumnKind::Label | ColumnKind::Drop => {}
            }
        }

        let mut output_feature_names = Vec::new();
        let mut source_columns = Vec::new();
        for enc in &encoders {
            let name = &schema.columns[enc.column()].name;
            match enc {
                ColumnEncoder::OneHot { categories, .. } => {
                    for cat in categories {
                        output_feature_names.push(format!("{name}={cat}"));
                        source_columns.push(enc.column());
                    }
                }
                _ => {
                    output_feature_names.push(name.clone());
                    source_columns.push(enc.column());
                }
            }
        }

        let mut pre = Preprocessor {
            columns: schema.columns.clone(),
            policy,
            encoders,
            label_column: schema.label_index(),
            label_map: schema.label_map.clone(),
            label_default: schema.label_default.clone(),
            class_names,
            scales: Vec::new(),
            output_feature_names,
            source_columns,
        };

        // Scale statistics come from the imputed, encoded training columns.
        let encoded = table
            .rows
            .iter()
            .map(|r| pre.encode_row(r))
            .collect::<Result<Vec<_>>>()?;
        let mut scales = Vec::new();
        let mut out = 0;
        for enc in &pre.encoders {
            match enc {
                ColumnEncoder::OneHot { categories, .. } => {
                    scales.extend(std::iter::repeat(None).take(categories.len()));
                    out += categories.len();
                }
                _ => {
                    let col: Vec<f64> = encoded.iter().map(|r| r[out]).collect();
                    let (mu, sd) = population_stats(&col);
                    // A constant column carries no signal; keep it at zero.
                    let std = if sd > 0.0 { sd } else { 1.0 };
                    scales.push(Some(ColumnScale { mean: mu, std }));
                    out += 1;
                }
            }
        }
        pre.scales = scales;
        Ok(pre)
    }

    pub fn output_feature_names(&self) -> &[String] {
        &self.output_feature_names
    }

    pub fn output_dim(&self) -> usize {
        self.output_feature_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn policy(&self) -> &PreprocessPolicy {
        &self.policy
    }

    pub fn encoders(&self) -> &[ColumnEncoder] {
        &self.encoders
    }

    pub fn scales(&self) -> &[Option<ColumnScale>] {
        &self.scales
    }

    /// Name of the raw input column an output column came from.
    pub fn source_column_name(&self, output: usize) -> &str {
        &self.columns[self.source_columns[output]].name
    }

    /// Imputes and encodes one raw row, without scaling.
    fn encode_row(&self, row: &[Option<Cell>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_feature_names.len());
        for enc in &self.encoders {
            let cell = row[enc.column()].as_ref();
            let name = &self.columns[enc.column()].name;
            match enc {
                ColumnEncoder::Numeric { impute, .. } => {
                    out.push(cell.and_then(Cell::as_num).unwrap_or(*impute));
                }
                ColumnEncoder::OneHot { categories, impute, .. } => {
                    let value = cell.map_or_else(|| impute.clone(), Cell::as_text);
                    let start = out.len();
                    out.extend(std::iter::repeat(0.0).take(enc.width()));
                    match categories.binary_search(&value) {
                        Ok(k) => out[start + k] = 1.0,
                        Err(_) => match self.policy.unseen_category {
                            UnseenCategory::AllZeros => {}
                            UnseenCategory::Error => {
                                return Err(Error::UnknownCategory { column: name.clone(), value })
                            }
                        },
                    }
                }
                ColumnEncoder::Ordinal { order, impute, .. } => {
                    let value = cell.map_or_else(|| impute.clone(), Cell::as_text);
                    let rank = order
                        .iter()
                        .position(|o| *o == value)
                        .ok_or_else(|| Error::UnknownCategory { column: name.clone(), value })?;
                    out.push(rank as f64);
                }
            }
        }
        Ok(out)
    }

    /// Encodes and standardizes one raw row into the model's feature space.
    pub fn transform_row(&self, row: &[Option<Cell>]) -> Result<Vec<f64>> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch { expected: self.columns.len(), got: row.len() });
        }
        let mut out = self.encode_row(row)?;
        for (v, scale) in out.iter_mut().zip(&self.scales) {
            if let Some(s) = scale {
                *v = (*v - s.mean) / s.std;
            }
        }
        Ok(out)
    }

    pub fn class_of(&self, raw_label: &str) -> Result<usize> {
        let mapped = match self.label_map.get(raw_label) {
            Some(m) => m.as_str(),
            None => self.label_default.as_deref().unwrap_or(raw_label),
        };
        self.class_names.iter().position(|c| c == mapped).ok_or_else(|| Error::UnknownCategory {
            column: self.columns[self.label_column].name.clone(),
            value: mapped.to_string(),
        })
    }

    /// Applies the fitted transformation. Rows failing the row-drop rule are
    /// skipped, as at fit time.
    pub fn apply(&self, table: &RawTable) -> Result<Dataset> {
        if table.schema.columns != self.columns {
            return Err(Error::Schema("table columns differ from the fitted schema".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut n = 0;
        for row in &table.rows {
            if !table.keeps_row(row, self.policy.row_drop_threshold) {
                continue;
            }
            features.extend(self.transform_row(row)?);
            let raw = row[self.label_column].as_ref().map(Cell::as_text).unwrap_or_default();
            labels.push(self.class_of(&raw)?);
            n += 1;
        }
        Dataset::new(
            Matrix::from_vec(n, self.output_dim(), features)?,
            labels,
            self.output_feature_names.clone(),
            self.class_names.clone(),
        )
    }

    /// Content hash of the fitted state; downstream artifacts record it so
    /// they cannot be paired with a different preprocessor.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("preprocessor serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn schema_matches(&self, schema: &Schema) -> bool {
        schema.columns == self.columns
    }
}

pub fn fit_preprocessor(table: &RawTable, policy: PreprocessPolicy) -> Result<Preprocessor> {
    Preprocessor::fit(table, policy)
}

pub fn apply_preprocessor(pre: &Preprocessor, table: &RawTable) -> Result<Dataset> {
    pre.apply(table)
}
