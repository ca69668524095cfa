//! Staged pipeline driver.
//!
//! Each stage reads its inputs from upstream artifacts in the output
//! directory and writes its own, so any stage can be rerun on its own.
//! The six JSON artifacts share an [`Artifact`] envelope that records the
//! config, the seed and the fingerprint of the fitted preprocessor.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{explain_instance, explain_latent, Attribution, BackgroundSet, Instance};
use crate::config::{AttributionSpace, FeatureSource, PipelineConfig};
use crate::datapipe::{load_table, split_indices, Dataset, Preprocessor, RawTable, Schema, SplitIndices};
use crate::distill::{argmax, predict, train_student, train_teacher, Classifier, ClassifierEpoch, DistillParams};
use crate::error::{Error, Result};
use crate::eval::{analytic_memory, confusion, metrics, time_inference, ConfusionMatrix, InferenceTiming, MetricsReport};
use crate::matrix::Matrix;
use crate::nn::{count_parameters, encode_dataset, train_vae, VaeArch, VaeEpoch, VaeModel};

pub const PREPROCESSOR_FILE: &str = "preprocessor.json";
pub const VAE_FILE: &str = "vae.json";
pub const TEACHER_FILE: &str = "teacher.json";
pub const STUDENT_FILE: &str = "student.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ATTRIBUTION_FILE: &str = "attribution.json";

/// The artifacts a full run produces, in stage order.
pub const ARTIFACT_FILES: [&str; 6] =
    [PREPROCESSOR_FILE, VAE_FILE, TEACHER_FILE, STUDENT_FILE, METRICS_FILE, ATTRIBUTION_FILE];

/// Directory for waterfall CSVs written by `explain`.
pub const WATERFALL_DIR: &str = "waterfalls";
/// Directory for the CSV tables and timing written by `report`.
pub const TABLES_DIR: &str = "tables";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    TrainVae,
    TrainTeacher,
    Distill,
    Evaluate,
    Explain,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Preprocess,
        Stage::TrainVae,
        Stage::TrainTeacher,
        Stage::Distill,
        Stage::Evaluate,
        Stage::Explain,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::TrainVae => "train-vae",
            Stage::TrainTeacher => "train-teacher",
            Stage::Distill => "distill",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }

    /// Marker file left in the output directory when the stage fails.
    pub fn failure_marker(self) -> String {
        format!("FAILED_{}", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Common wrapper around every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub seed: u64,
    pub preprocessor_fingerprint: String,
    pub config: PipelineConfig,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPayload {
    pub preprocessor: Preprocessor,
    /// Indices into the retained rows of the concatenated input tables.
    pub split: SplitIndices,
    pub loaded_rows: usize,
    pub retained_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaePayload {
    pub model: VaeModel,
    pub history: Vec<VaeEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPayload {
    pub role: String,
    pub feature_source: FeatureSource,
    pub model: Classifier,
    pub history: Vec<ClassifierEpoch>,
    /// For a student: hash of the teacher it was distilled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPayload {
    pub test_rows: usize,
    pub models: Vec<ModelEvaluation>,
    /// Fraction of test rows where student and teacher predict the same class.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub model: String,
    pub test_row: usize,
    pub true_class: String,
    pub predicted_class: String,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionPayload {
    pub space: AttributionSpace,
    /// Training-row indices used as the background set.
    pub background_rows: Vec<usize>,
    pub reports: Vec<InstanceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTiming {
    pub model: String,
    pub params: usize,
    pub memory_bytes: usize,
    pub timing: InferenceTiming,
}

/// Hex SHA-256 of a value's JSON form.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("artifact serializes");
    hex::encode(Sha256::digest(&json))
}

/// Writes `bytes` to `path` through a `.partial` sibling and a rename, so a
/// crash never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })
}

fn write_csv_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

/// Loads and concatenates the configured data files.
pub fn load_tables(cfg: &PipelineConfig) -> Result<RawTable> {
    let schema = Schema::load(&cfg.schema)?;
    let tables = cfg.data.iter().map(|p| load_table(p, &schema)).collect::<Result<Vec<_>>>()?;
    RawTable::concat(tables)
}

/// Preprocessed train and test splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub preprocessor: Preprocessor,
    pub fingerprint: String,
    pub split: SplitIndices,
    pub train: Dataset,
    pub test: Dataset,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg, out: out.into() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// Runs every stage in order, stopping at the first failure.
    pub fn run(&self) -> Result<()> {
        Stage::ALL.iter().try_for_each(|&s| self.run_stage(s))
    }

    /// Runs one stage. On failure a `FAILED_<stage>` marker holding the
    /// error text is written and the error is tagged with the stage name.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let marker = self.path(&stage.failure_marker());
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        let result = match stage {
            Stage::Preprocess => self.preprocess(),
            Stage::TrainVae => self.train_vae(),
            Stage::TrainTeacher => self.train_teacher(),
            Stage::Distill => self.distill(),
            Stage::Evaluate => self.evaluate(),
            Stage::Explain => self.explain(),
            Stage::Report => self.report(),
        };
        result.map_err(|e| {
            // best effort: the original error matters more than the marker
            let _ = std::fs::write(&marker, format!("{e}\n"));
            e.in_stage(stage.name())
        })
    }

    fn envelope<T>(&self, kind: &str, fingerprint: &str, payload: T) -> Artifact<T> {
        Artifact {
            kind: kind.to_string(),
            seed: self.cfg.seed,
            preprocessor_fingerprint: fingerprint.to_string(),
            config: self.cfg.replay_view(),
            payload,
        }
    }

    fn read_artifact<T: DeserializeOwned>(&self, file: &str, fingerprint: &str) -> Result<Artifact<T>> {
        let a: Artifact<T> = read_json(&self.path(file))?;
        if a.preprocessor_fingerprint != fingerprint {
            return Err(Error::ArtifactMismatch(format!(
                "{file} was built with preprocessor {} but {PREPROCESSOR_FILE} is {fingerprint}",
                short(&a.preprocessor_fingerprint)
            )));
        }
        Ok(a)
    }

    pub fn preprocess(&self) -> Result<()> {
        let table = load_tables(&self.cfg)?;
        let loaded_rows = table.len();
        let retained = table.retained(self.cfg.preprocess.row_drop_threshold);
        if retained.is_empty() {
            return Err(Error::InvalidArgument("no rows left after row-drop filtering".into()));
        }
        // The class vocabulary spans every retained row so that a class absent
        // from the training split still has a stable index.
        let mapped: Vec<String> = retained.mapped_labels().into_iter().map(Option::unwrap_or_default).collect();
        let classes = match &retained.schema.classes {
            Some(c) => c.clone(),
            None => {
                let mut c = mapped.clone();
                c.sort();
                c.dedup();
                c
            }
        };
        let labels = mapped
            .iter()
            .map(|m| {
                classes.iter().position(|c| c == m).ok_or_else(|| Error::UnknownCategory {
                    column: retained.schema.columns[retained.schema.label_index()].name.clone(),
                    value: m.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let split = split_indices(
            &labels,
            classes.len(),
            self.cfg.train_fraction,
            self.cfg.stage_seeds().split,
            self.cfg.stratified,
        )?;
        let pre = Preprocessor::fit_with_classes(
            &retained.select(&split.train),
            self.cfg.preprocess.clone(),
            Some(classes),
        )?;
        let fp = pre.fingerprint();
        let payload = PreprocessPayload { preprocessor: pre, split, loaded_rows, retained_rows: retained.len() };
        write_json(&self.path(PREPROCESSOR_FILE), &self.envelope("preprocessor", &fp, payload))
    }

    /// Reloads the fitted preprocessor and rebuilds both splits from the raw data.
    pub fn prepared(&self) -> Result<Prepared> {
        let a: Artifact<PreprocessPayload> = read_json(&self.path(PREPROCESSOR_FILE))?;
        let pre = a.payload.preprocessor;
        let fingerprint = pre.fingerprint();
        if fingerprint != a.preprocessor_fingerprint {
            return Err(Error::ArtifactMismatch(format!("{PREPROCESSOR_FILE} content does not match its fingerprint")));
        }
        let table = load_tables(&self.cfg)?;
        if !pre.schema_matches(&table.schema) {
            return Err(Error::ArtifactMismatch(format!("schema differs from the one in {PREPROCESSOR_FILE}")));
        }
        let retained = table.retained(pre.policy().row_drop_threshold);
        if retained.len() != a.payload.retained_rows {
            return Err(Error::ArtifactMismatch(format!(
                "data has {} retained rows, {PREPROCESSOR_FILE} expects {}",
                retained.len(),
                a.payload.retained_rows
            )));
        }
        let split = a.payload.split;
        let train = pre.apply(&retained.select(&split.train))?;
        let test = pre.apply(&retained.select(&split.test))?;
        Ok(Prepared { preprocessor: pre, fingerprint, split, train, test })
    }

    fn vae_arch(&self, input_dim: usize) -> VaeArch {
        let v = &self.cfg.vae;
        VaeArch {
            input_dim,
            encoder_hidden: v.encoder_hidden.clone(),
            latent_dim: v.latent_dim,
            decoder_hidden: v.decoder_hidden.clone(),
            beta: v.beta,
        }
    }

    pub fn train_vae(&self) -> Result<()> {
        let p = self.prepared()?;
        let arch = self.vae_arch(p.train.width());
        let cfg = self.cfg.vae.train.with_seed(self.cfg.stage_seeds().vae);
        let (model, history) = train_vae(&p.train, &arch, &cfg)?;
        write_json(&self.path(VAE_FILE), &self.envelope("vae", &p.fingerprint, VaePayload { model, history }))
    }

    pub fn load_vae(&self, fingerprint: &str) -> Result<VaeModel> {
        Ok(self.read_artifact::<VaePayload>(VAE_FILE, fingerprint)?.payload.model)
    }

    /// Train and test sets in the space the classifiers consume.
    pub fn classifier_data(&self, p: &Prepared) -> Result<(Dataset, Dataset, Option<VaeModel>)> {
        match self.cfg.feature_source {
            FeatureSource::Raw => Ok((p.train.clone(), p.test.clone(), None)),
            FeatureSource::Latent => {
                let vae = self.load_vae(&p.fingerprint)?;
                Ok((encode_dataset(&vae, &p.train)?, encode_dataset(&vae, &p.test)?, Some(vae)))
            }
        }
    }

    pub fn load_classifier(&self, file: &str, fingerprint: &str) -> Result<ClassifierPayload> {
        let a = self.read_artifact::<ClassifierPayload>(file, fingerprint)?;
        if a.payload.feature_source != self.cfg.feature_source {
            return Err(Error::ArtifactMismatch(format!(
                "{file} was trained on {:?} features but {:?} features were requested",
                a.payload.feature_source, self.cfg.feature_source
            )));
        }
        Ok(a.payload)
    }

    /// Teacher and student, checking the student was distilled from this teacher.
    pub fn load_models(&self, fingerprint: &str) -> Result<(Classifier, Classifier)> {
        let teacher = self.load_classifier(TEACHER_FILE, fingerprint)?.model;
        let student = self.load_classifier(STUDENT_FILE, fingerprint)?;
        if student.teacher_hash.as_deref() != Some(content_hash(&teacher).as_str()) {
            return Err(Error::ArtifactMismatch(format!("{STUDENT_FILE} was distilled from a different teacher")));
        }
        Ok((teacher, student.model))
    }

    pub fn train_teacher(&self) -> Result<()> {
        let p = self.prepared()?;
        let (train, _, _) = self.classifier_data(&p)?;
        let cfg = self.cfg.teacher.train.with_seed(self.cfg.stage_seeds().teacher);
        let (model, history) = train_teacher(&train, &self.cfg.teacher.arch(), &cfg)?;
        let payload = ClassifierPayload {
            role: "teacher".into(),
            feature_source: self.cfg.feature_source,
            model,
            history,
            teacher_hash: None,
            distill: None,
        };
        write_json(&self.path(TEACHER_FILE), &self.envelope("teacher", &p.fingerprint, payload))
    }

    pub fn distill(&self) -> Result<()> {
        let p = self.prepared()?;
        let (train, _, _) = self.classifier_data(&p)?;
        let teacher = self.load_classifier(TEACHER_FILE, &p.fingerprint)?.model;
        let cfg = self.cfg.student.train.with_seed(self.cfg.stage_seeds().student);
        let (model, history) = train_student(&train, &teacher, &self.cfg.student.arch(), self.cfg.distill, &cfg)?;
        let payload = ClassifierPayload {
            role: "student".into(),
            feature_source: self.cfg.feature_source,
            model,
            history,
            teacher_hash: Some(content_hash(&teacher)),
            distill: Some(self.cfg.distill),
        };
        write_json(&self.path(STUDENT_FILE), &self.envelope("student", &p.fingerprint, payload))
    }

    pub fn evaluate(&self) -> Result<()> {
        let p = self.prepared()?;
        let (_, test, _) = self.classifier_data(&p)?;
        let (teacher, student) = self.load_models(&p.fingerprint)?;
        let mut models = Vec::new();
        let mut predictions = Vec::new();
        for (name, model) in [("teacher", &teacher), ("student", &student)] {
            let (pred, _) = predict(model, &test.features)?;
            let cm = confusion(&test.labels, &pred, &test.class_names)?;
            let mut report = metrics(&cm)?;
            report.params = Some(count_parameters(model));
            report.memory_bytes = Some(analytic_memory(model));
            models.push(ModelEvaluation { model: name.into(), report, confusion: cm });
            predictions.push(pred);
        }
        let same = predictions[0].iter().zip(&predictions[1]).filter(|(a, b)| a == b).count();
        let payload = MetricsPayload { test_rows: test.len(), models, agreement: same as f64 / test.len() as f64 };
        write_json(&self.path(METRICS_FILE), &self.envelope("metrics", &p.fingerprint, payload))
    }

    /// Sorted training-row indices forming the background set.
    pub fn background_rows(&self, train_rows: usize) -> Vec<usize> {
        let m = self.cfg.explain.background_size.min(train_rows);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.stage_seeds().background);
        let mut rows = rand::seq::index::sample(&mut rng, train_rows, m).into_vec();
        rows.sort_unstable();
        rows
    }

    pub fn explain(&self) -> Result<()> {
        let p = self.prepared()?;
        let (train, test, vae) = self.classifier_data(&p)?;
        let (teacher, student) = self.load_models(&p.fingerprint)?;
        let space = self.cfg.explain.space;
        let target = match &self.cfg.explain.target_class {
            Some(sel) => Some(sel.resolve(&test.class_names)?),
            None => None,
        };
        if let Some(&bad) = self.cfg.explain.instances.iter().find(|&&r| r >= test.len()) {
            return Err(Error::InvalidArgument(format!("instance {bad} is outside the {}-row test set", test.len())));
        }
        let background_rows = self.background_rows(train.len());
        // In input space the background lives in preprocessed-feature space
        // and the encoder sits inside the explained function.
        let (bg_source, inst_source, encoder) = match space {
            AttributionSpace::Latent => (&train, &test, None),
            AttributionSpace::Input => (&p.train, &p.test, vae.as_ref()),
        };
        let bg = BackgroundSet::new(bg_source.features.select_rows(&background_rows))?;

        let waterfalls = self.out.join(WATERFALL_DIR);
        std::fs::create_dir_all(&waterfalls).map_err(|e| Error::io(&waterfalls, e))?;
        let mut reports = Vec::new();
        for name in &self.cfg.explain.models {
            let model = if name == "teacher" { &teacher } else { &student };
            for &row in &self.cfg.explain.instances {
                let probs = model.probabilities(&test.features.select_rows(&[row]))?;
                let predicted = argmax(probs.row(0));
                let class = target.unwrap_or(predicted);
                let x = inst_source.features.row(row).to_vec();
                let attribution = match space {
                    AttributionSpace::Latent => explain_latent(model, &bg, &x, class)?,
                    AttributionSpace::Input => {
                        explain_instance(model, encoder, &p.preprocessor, &bg, &Instance::Preprocessed(x), class)?
                    }
                };
                let path = waterfalls.join(format!("waterfall_{name}_row{row}.csv"));
                write_csv_with(&path, |w| attribution.write_waterfall_csv(w))?;
                reports.push(InstanceReport {
                    model: name.clone(),
                    test_row: row,
                    true_class: test.class_names[test.labels[row]].clone(),
                    predicted_class: test.class_names[predicted].clone(),
                    attribution,
                });
            }
        }
        let payload = AttributionPayload { space, background_rows, reports };
        write_json(&self.path(ATTRIBUTION_FILE), &self.envelope("attribution", &p.fingerprint, payload))
    }

    /// Times teacher and student inference on a batch of test rows.
    pub fn timings(&self, test: &Dataset, teacher: &Classifier, student: &Classifier) -> Result<Vec<ModelTiming>> {
        let rows: Vec<usize> = (0..self.cfg.timing.batch_size).map(|i| i % test.len()).collect();
        let batch = test.features.select_rows(&rows);
        [("teacher", teacher), ("student", student)]
            .into_iter()
            .map(|(name, model)| {
                let timing = time_inference(|b: &Matrix| model.logits(b), &batch, self.cfg.timing.repeats)?;
                Ok(ModelTiming {
                    model: name.into(),
                    params: count_parameters(model),
                    memory_bytes: analytic_memory(model),
                    timing,
                })
            })
            .collect()
    }

    /// Writes CSV tables derived from the metrics artifact plus
    /// wall-clock timing, which is kept out of the deterministic artifacts.
    pub fn report(&self) -> Result<()> {
        let p = self.prepared()?;
        let metrics: Artifact<MetricsPayload> = self.read_artifact(METRICS_FILE, &p.fingerprint)?;
        let (_, test, _) = self.classifier_data(&p)?;
        let (teacher, student) = self.load_models(&p.fingerprint)?;
        let tables = self.out.join(TABLES_DIR);
        std::fs::create_dir_all(&tables).map_err(|e| Error::io(&tables, e))?;

        for m in &metrics.payload.models {
            write_csv_with(&tables.join(format!("metrics_{}.csv", m.model)), |w| m.report.write_csv(w))?;
            write_csv_with(&tables.join(format!("confusion_{}.csv", m.model)), |w| m.confusion.write_csv(w))?;
        }

        let timings = self.timings(&test, &teacher, &student)?;
        write_csv_with(&tables.join("complexity.csv"), |w| {
            use std::io::Write;
            writeln!(w, "model,params,memory_bytes,ms_per_batch,ms_per_sample,batch_size")?;
            for t in &timings {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    t.model, t.params, t.memory_bytes, t.timing.ms_per_batch, t.timing.ms_per_sample, t.timing.batch_size
                )?;
            }
            Ok(())
        })?;
        write_json(&tables.join("timing.json"), &timings)?;

        let train_counts = p.train.class_counts();
        let test_counts = p.test.class_counts();
        write_csv_with(&tables.join("class_distribution.csv"), |w| {
            use std::io::Write;
            writeln!(w, "class,train,test,total")?;
            for (k, name) in p.train.class_names.iter().enumerate() {
                let (a, b) = (train_counts[k], test_counts[k]);
                writeln!(w, "{name},{a},{b},{}", a + b)?;
            }
            Ok(())
        })
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
