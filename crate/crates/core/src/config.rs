//! Pipeline configuration and the reference classifier architectures.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datapipe::PreprocessPolicy;
use crate::distill::{ClassifierArch, DistillParams};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, TrainConfig};

/// Which representation the classifiers consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Latent,
    Raw,
}

/// Space in which attributions are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionSpace {
    /// Preprocessed input features (through the encoder in latent mode).
    Input,
    /// Latent coordinates; only meaningful with latent features.
    Latent,
}

/// Class given by name or by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassSelector {
    Index(usize),
    Name(String),
}

impl ClassSelector {
    pub fn parse(s: &str) -> ClassSelector {
        s.parse().map(ClassSelector::Index).unwrap_or_else(|_| ClassSelector::Name(s.to_string()))
    }

    pub fn resolve(&self, class_names: &[String]) -> Result<usize> {
        match self {
            ClassSelector::Index(i) if *i < class_names.len() => Ok(*i),
            ClassSelector::Index(i) => Err(Error::LabelOutOfRange { label: *i, classes: class_names.len() }),
            ClassSelector::Name(n) => class_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown class `{n}`; classes are {class_names:?}"))),
        }
    }
}

/// Optimization settings for one training stage; the seed is derived from
/// the pipeline seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 100, batch_size: 64, learning_rate: 0.001, optimizer: OptimizerKind::Adam }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeSettings {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub beta: f64,
    pub train: TrainSettings,
}

impl Default for VaeSettings {
    fn default() -> Self {
        VaeSettings {
            encoder_hidden: vec![64],
            latent_dim: 32,
            decoder_hidden: vec![64],
            beta: 1.0,
            train: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainSettings,
}

impl ClassifierSettings {
    pub fn arch(&self) -> ClassifierArch {
        ClassifierArch { hidden: self.hidden.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Test-set row indices to explain.
    pub instances: Vec<usize>,
    /// Class whose probability is explained; `None` explains each row's
    /// predicted class.
    pub target_class: Option<ClassSelector>,
    pub background_size: usize,
    pub space: AttributionSpace,
    pub models: Vec<String>,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            instances: vec![0],
            target_class: None,
            background_size: 1000,
            space: AttributionSpace::Input,
            models: vec!["teacher".into(), "student".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingSettings {
    pub batch_size: usize,
    pub repeats: usize,
}

impl Default for TimingSettings {
    fn default() -> Self {
        TimingSettings { batch_size: 64, repeats: 11 }
    }
}

/// Everything needed to replay a pipeline run.
///
/// Relative paths are resolved against the directory of the config file.
/// Command-line flags override file values, which override defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: Vec<PathBuf>,
    pub schema: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub preprocess: PreprocessPolicy,
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    pub feature_source: FeatureSource,
    pub vae: VaeSettings,
    pub teacher: ClassifierSettings,
    pub student: ClassifierSettings,
    pub distill: DistillParams,
    pub explain: ExplainSettings,
    pub timing: TimingSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: Vec::new(),
            schema: PathBuf::new(),
            output_dir: None,
            preprocess: PreprocessPolicy::default(),
            train_fraction: 0.10,
            stratified: true,
            seed: 0,
            feature_source: FeatureSource::Latent,
            vae: VaeSettings::default(),
            teacher: ClassifierSettings { hidden: vec![128, 64], train: TrainSettings::default() },
            student: ClassifierSettings { hidden: vec![64, 32], train: TrainSettings::default() },
            distill: DistillParams::default(),
            explain: ExplainSettings::default(),
            timing: TimingSettings::default(),
        }
    }
}

/// Per-stage seeds, all derived from the pipeline seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub split: u64,
    pub vae: u64,
    pub teacher: u64,
    pub student: u64,
    pub background: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        self.data.iter_mut().for_each(fix);
        fix(&mut self.schema);
        if let Some(out) = self.output_dir.as_mut() {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::InvalidArgument("config lists no data files".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train_fraction must be in (0, 1), got {}", self.train_fraction)));
        }
        self.preprocess.validate()?;
        self.distill.validate()?;
        for t in [&self.vae.train, &self.teacher.train, &self.student.train] {
            t.with_seed(0).validate()?;
        }
        if self.explain.background_size == 0 {
            return Err(Error::InvalidArgument("explain.background_size must be positive".into()));
        }
        if self.explain.space == AttributionSpace::Latent && self.feature_source == FeatureSource::Raw {
            return Err(Error::InvalidArgument("latent attribution requires latent features".into()));
        }
        for m in &self.explain.models {
            if m != "teacher" && m != "student" {
                return Err(Error::InvalidArgument(format!("unknown model `{m}` in explain.models")));
            }
        }
        if self.timing.repeats < 3 || self.timing.batch_size == 0 {
            return Err(Error::InvalidArgument("timing needs batch_size > 0 and repeats >= 3".into()));
        }
        Ok(())
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        let s = self.seed;
        StageSeeds {
            split: s,
            vae: s.wrapping_add(1),
            teacher: s.wrapping_add(2),
            student: s.wrapping_add(3),
            background: s.wrapping_add(4),
        }
    }

    /// The config as embedded in artifacts: identical for any output directory.
    pub fn replay_view(&self) -> PipelineConfig {
        PipelineConfig { output_dir: None, ..self.clone() }
    }
}

/// Classifier widths that reproduce the reported student/teacher parameter
/// counts. `input_dim` is the classifier's input (latent width for the
/// 32-wide configs, one-hot encoded raw width otherwise) and `outputs` the
/// number of logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceArch {
    pub dataset: &'static str,
    pub task: &'static str,
    pub input_dim: usize,
    pub outputs: usize,
    pub student_hidden: &'static [usize],
    pub teacher_hidden: &'static [usize],
    pub student_params: usize,
    pub teacher_params: usize,
}

impl ReferenceArch {
    pub fn student_widths(&self) -> Vec<usize> {
        widths(self.input_dim, self.student_hidden, self.outputs)
    }

    pub fn teacher_widths(&self) -> Vec<usize> {
        widths(self.input_dim, self.teacher_hidden, self.outputs)
    }
}

fn widths(input: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(out);
    w
}

pub const REFERENCE_ARCHS: &[ReferenceArch] = &[
    ReferenceArch {
        dataset: "CTU-13",
        task: "binary",
        input_dim: 32,
        outputs: 2,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 4_258,
        teacher_params: 12_610,
    },
    ReferenceArch {
        dataset: "UKM-IDS20",
        task: "binary",
        input_dim: 32,
        outputs: 2,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 4_258,
        teacher_params: 12_610,
    },
    // Single-logit binary heads.
    ReferenceArch {
        dataset: "Edge-IIoTset",
        task: "binary",
        input_dim: 32,
        outputs: 1,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 4_225,
        teacher_params: 12_545,
    },
    ReferenceArch {
        dataset: "NSL-KDD",
        task: "binary",
        input_dim: 32,
        outputs: 1,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 4_225,
        teacher_params: 12_545,
    },
    ReferenceArch {
        dataset: "UKM-IDS20",
        task: "multiclass",
        input_dim: 32,
        outputs: 9,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 4_489,
        teacher_params: 13_065,
    },
    ReferenceArch {
        dataset: "Edge-IIoTset",
        task: "multiclass",
        input_dim: 102,
        outputs: 15,
        student_hidden: &[64, 32],
        teacher_hidden: &[128, 64],
        student_params: 9_167,
        teacher_params: 22_415,
    },
    ReferenceArch {
        dataset: "NSL-KDD",
        task: "multiclass",
        input_dim: 122,
        outputs: 5,
        student_hidden: &[64],
        teacher_hidden: &[128, 64],
        student_params: 8_197,
        teacher_params: 24_325,
    },
];

pub fn reference_arch(dataset: &str, task: &str) -> Option<&'static ReferenceArch> {
    REFERENCE_ARCHS.iter().find(|r| r.dataset == dataset && r.task == task)
}
