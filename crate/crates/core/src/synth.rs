//! Seeded synthetic flow tables for smoke tests and demos.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{ClassifierSettings, ExplainSettings, PipelineConfig, TimingSettings, TrainSettings, VaeSettings};
use crate::datapipe::{Cell, ColumnKind, ColumnSchema, RawTable, Schema};
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub numeric_features: usize,
    pub class_names: Vec<String>,
    /// Distance between class centers, in units of the per-feature noise std.
    pub separation: f64,
    /// Adds a nominal `proto` column and an ordinal `severity` column.
    pub categorical: bool,
    /// Probability that a numeric cell is blanked out.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            rows: 600,
            numeric_features: 8,
            class_names: vec!["normal".into(), "attack".into()],
            separation: 6.0,
            categorical: true,
            missing_rate: 0.01,
            seed: 7,
        }
    }
}

pub const PROTOCOLS: [&str; 3] = ["icmp", "tcp", "udp"];
pub const SEVERITY: [&str; 3] = ["low", "medium", "high"];

impl SyntheticSpec {
    pub fn schema(&self) -> Schema {
        let mut cols: Vec<ColumnSchema> =
            (0..self.numeric_features).map(|j| ColumnSchema::new(format!("f{j}"), ColumnKind::Numeric)).collect();
        if self.categorical {
            cols.push(ColumnSchema::new("proto", ColumnKind::Nominal));
            cols.push(ColumnSchema::ordinal("severity", &SEVERITY));
        }
        cols.push(ColumnSchema::new("class", ColumnKind::Label));
        let mut schema = Schema::new(cols);
        schema.classes = Some(self.class_names.clone());
        schema
    }

    /// Gaussian clusters, one per class, with centers placed at random
    /// directions scaled so neighbouring centers are `separation` apart.
    /// Classes are assigned round-robin so counts differ by at most one.
    pub fn generate(&self) -> Result<RawTable> {
        if self.class_names.len() < 2 || self.numeric_features == 0 || self.rows < self.class_names.len() {
            return Err(Error::InvalidArgument("synthetic data needs >= 2 classes, >= 1 feature and enough rows".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let p = self.numeric_features;
        let centers: Vec<Vec<f64>> = (0..self.class_names.len())
            .map(|_| {
                let dir: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                // two random centers at radius s/sqrt(2) are ~s apart on average
                dir.iter().map(|v| v / norm * self.separation / std::f64::consts::SQRT_2).collect()
            })
            .collect();
        let scales: Vec<f64> = (0..p).map(|j| 10f64.powi((j % 4) as i32)).collect();

        let mut rows = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let class = i % self.class_names.len();
            let mut row: Vec<Option<Cell>> = Vec::new();
            for j in 0..p {
                let noise: f64 = rng.sample(StandardNormal);
                let v = (centers[class][j] + noise) * scales[j] + 5.0 * scales[j];
                let missing = rng.gen_bool(self.missing_rate);
                row.push(if missing { None } else { Some(Cell::Num(v)) });
            }
            if self.categorical {
                let proto = if rng.gen_bool(0.8) { PROTOCOLS[class % 3] } else { PROTOCOLS[rng.gen_range(0..3)] };
                row.push(Some(Cell::Text(proto.into())));
                let sev = if class == 0 { rng.gen_range(0..2) } else { rng.gen_range(1..3) };
                row.push(Some(Cell::Text(SEVERITY[sev].into())));
            }
            row.push(Some(Cell::Text(self.class_names[class].clone())));
            rows.push(row);
        }
        RawTable::new(self.schema(), rows)
    }
}

/// Pipeline settings sized for a few hundred synthetic rows: an 8-wide latent
/// space and small classifiers trained with a larger step size.
pub fn small_config(data: PathBuf, schema: PathBuf) -> PipelineConfig {
    let train = TrainSettings { epochs: 100, batch_size: 32, learning_rate: 0.005, optimizer: OptimizerKind::Adam };
    PipelineConfig {
        data: vec![data],
        schema,
        vae: VaeSettings { encoder_hidden: vec![16], latent_dim: 8, decoder_hidden: vec![16], beta: 1.0, train },
        teacher: ClassifierSettings { hidden: vec![64, 32], train },
        student: ClassifierSettings { hidden: vec![16, 8], train },
        explain: ExplainSettings { instances: vec![0, 1], background_size: 200, ..ExplainSettings::default() },
        timing: TimingSettings { batch_size: 64, repeats: 5 },
        ..PipelineConfig::default()
    }
}

/// Writes a table as CSV with a header row; missing cells become empty fields.
pub fn write_table_csv(table: &RawTable, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(table.schema.columns.iter().map(|c| c.name.as_str())).map_err(csv_err)?;
    for row in &table.rows {
        let rec: Vec<String> = row.iter().map(|c| c.as_ref().map(Cell::as_text).unwrap_or_default()).collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string_pretty(schema).expect("schema serializes");
    writeln!(f, "{text}").map_err(|e| Error::io(path, e))
}
