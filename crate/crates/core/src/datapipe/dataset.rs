use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fully numeric feature matrix with class-index labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

pub const LABEL_COLUMN: &str = "label";

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.rows(), got: labels.len() });
        }
        if features.cols() != feature_names.len() {
            return Err(Error::DimensionMismatch { expected: features.cols(), got: feature_names.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange { label: bad, classes: class_names.len() });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset { features, labels, feature_names, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes features and the label index as CSV. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(LABEL_COLUMN);
        w.write_record(&header).map_err(csv_err)?;
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV produced by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path, class_names: Vec<String>) -> Result<Self> {
        let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().last() != Some(LABEL_COLUMN) {
            return Err(Error::HeaderMismatch(format!("last column of {} must be `{LABEL_COLUMN}`", path.display())));
        }
        let width = header.len() - 1;
        let feature_names: Vec<String> = header.iter().take(width).map(str::to_string).collect();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            for v in rec.iter().take(width) {
                data.push(v.parse::<f64>().map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("bad number `{v}`: {e}"),
                })?);
            }
            let l = &rec[width];
            labels.push(l.parse::<usize>().map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: format!("bad label `{l}`: {e}"),
            })?);
        }
        if labels.is_empty() {
            return Err(Error::EmptyTable(path.to_path_buf()));
        }
        let n = labels.len();
        Dataset::new(Matrix::from_vec(n, width, data)?, labels, feature_names, class_names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = Matrix::from_rows(&[[0.1, -1.0 / 3.0], [1e-300, 12345.678901234567]]).unwrap();
        let d = Dataset::new(m, vec![1, 0], vec!["a".into(), "b".into()], vec!["n".into(), "x".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        let back = Dataset::read_csv(&p, d.class_names.clone()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let m = Matrix::zeros(1, 1);
        let err = Dataset::new(m, vec![2], vec!["a".into()], vec!["x".into(), "y".into()]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
    }
}
