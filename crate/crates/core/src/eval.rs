//! Confusion matrices, per-class rates, model size and inference timing.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Parameterized;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), got: y_pred.len() });
    }
    let c = class_names.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= c || p >= c {
            return Err(Error::LabelOutOfRange { label: t.max(p), classes: c });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts, class_names: class_names.to_vec() })
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "true\\predicted")?;
        for n in &self.class_names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            write!(w, "{n}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted: Aggregate,
    pub macro_avg: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_bytes: Option<usize>,
    /// Wall-clock numbers vary run to run; the pipeline stores them apart
    /// from the deterministic report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_ms_per_batch: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-class precision/recall/F1. Rates with a zero
/// denominator are reported as 0. Weighted aggregates weight each class by
/// its support; macro aggregates weight classes equally.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    let mut trace = 0;
    for k in 0..c {
        let tp = cm.counts[k][k];
        trace += tp;
        let support: u64 = cm.counts[k].iter().sum();
        let predicted: u64 = cm.counts.iter().map(|r| r[k]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.push(ClassMetrics { class_name: cm.class_names[k].clone(), precision, recall, f1, support });
    }
    let weighted = Aggregate {
        precision: per_class.iter().map(|m| m.precision * m.support as f64).sum::<f64>() / total as f64,
        recall: per_class.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / total as f64,
        f1: per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64,
    };
    let macro_avg = Aggregate {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / c as f64,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / c as f64,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / c as f64,
    };
    Ok(MetricsReport {
        accuracy: ratio(trace, total),
        per_class,
        weighted,
        macro_avg,
        params: None,
        memory_bytes: None,
        inference_ms_per_batch: None,
    })
}

impl MetricsReport {
    /// One overall row followed by one row per class.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "class,accuracy,precision,recall,f1,support")?;
        let support: u64 = self.per_class.iter().map(|m| m.support).sum();
        writeln!(
            w,
            "overall,{},{},{},{},{}",
            self.accuracy, self.weighted.precision, self.weighted.recall, self.weighted.f1, support
        )?;
        for m in &self.per_class {
            // per-class accuracy is the fraction of that class's rows predicted correctly
            writeln!(w, "{},{},{},{},{},{}", m.class_name, m.recall, m.precision, m.recall, m.f1, m.support)?;
        }
        Ok(())
    }
}

/// Per-batch and per-sample wall-clock inference time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub batch_size: usize,
    pub repeats: usize,
    pub ms_per_batch: f64,
    pub ms_per_sample: f64,
}

/// Median wall-clock time of `run(batch)` over `repeats` runs after one
/// warm-up run. The per-sample figure divides by the batch size.
pub fn time_inference<F, T>(mut run: F, batch: &Matrix, repeats: usize) -> Result<InferenceTiming>
where
    F: FnMut(&Matrix) -> Result<T>,
{
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("cannot time an empty batch".into()));
    }
    if repeats < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 repeats, got {repeats}")));
    }
    std::hint::black_box(run(batch)?);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(run(batch)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 1 { samples[mid] } else { 0.5 * (samples[mid - 1] + samples[mid]) };
    // Clock resolution can round tiny models to zero.
    let ms_per_batch = median.max(f64::MIN_POSITIVE);
    Ok(InferenceTiming {
        batch_size: batch.rows(),
        repeats,
        ms_per_batch,
        ms_per_sample: ms_per_batch / batch.rows() as f64,
    })
}

/// Size of each stored parameter.
pub const BYTES_PER_PARAMETER: usize = std::mem::size_of::<f64>();

/// Bytes of per-layer bookkeeping: input width, output width, activation tag
/// and the two `Vec` headers for weights and bias.
pub const LAYER_METADATA_BYTES: usize = 3 * std::mem::size_of::<usize>() + 2 * std::mem::size_of::<Vec<f64>>();

/// Bytes of model-level bookkeeping (input and output width).
pub const MODEL_METADATA_BYTES: usize = 2 * std::mem::size_of::<usize>();

/// Parameter bytes plus fixed model and per-layer metadata.
pub fn analytic_memory<M: Parameterized + ?Sized>(model: &M) -> usize {
    model.num_parameters() * BYTES_PER_PARAMETER + MODEL_METADATA_BYTES + model.layers().len() * LAYER_METADATA_BYTES
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 1], &names(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![0, 2]]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn total_confusion() {
        let cm = confusion(&[0, 0], &[1, 1], &names(2)).unwrap();
        assert_eq!(cm.counts[0][1], 2);
        assert_eq!(metrics(&cm).unwrap().accuracy, 0.0);
    }

    #[test]
    fn hand_computed_binary_case() {
        let cm = ConfusionMatrix { counts: vec![vec![50, 10], vec![5, 35]], class_names: names(2) };
        let m = metrics(&cm).unwrap();
        let c1 = &m.per_class[1];
        assert!((c1.precision - 35.0 / 45.0).abs() < 1e-15);
        assert!((c1.recall - 0.875).abs() < 1e-15);
        let f1 = 2.0 * (35.0 / 45.0) * 0.875 / (35.0 / 45.0 + 0.875);
        assert!((c1.f1 - f1).abs() < 1e-15);
        assert!((c1.f1 - 0.8235).abs() < 1e-4);
        assert_eq!(m.accuracy, 0.85);
    }

    #[test]
    fn zero_support_class_gets_zero_rates() {
        let cm = confusion(&[0, 1, 0], &[0, 1, 1], &names(3)).unwrap();
        let m = metrics(&cm).unwrap();
        let c2 = &m.per_class[2];
        assert_eq!((c2.precision, c2.recall, c2.f1, c2.support), (0.0, 0.0, 0.0, 0));
        let by_hand = (m.per_class[0].recall * 2.0 + m.per_class[1].recall) / 3.0;
        assert!((m.weighted.recall - by_hand).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(confusion(&[0], &[0, 1], &names(2)).is_err());
        assert!(confusion(&[2], &[0], &names(2)).is_err());
        let empty = confusion(&[], &[], &names(2)).unwrap();
        assert!(metrics(&empty).is_err());
    }

    #[test]
    fn timing_contract() {
        let batch = Matrix::zeros(4, 3);
        let t = time_inference(|b: &Matrix| Ok(b.as_slice().iter().sum::<f64>()), &batch, 5).unwrap();
        assert!(t.ms_per_batch.is_finite() && t.ms_per_batch > 0.0);
        assert_eq!(t.ms_per_sample, t.ms_per_batch / 4.0);
        assert!(time_inference(|_: &Matrix| Ok(()), &batch, 2).is_err());
        assert!(time_inference(|_: &Matrix| Ok(()), &Matrix::zeros(0, 3), 5).is_err());
    }

    #[test]
    fn memory_estimate() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let net = crate::nn::DenseNet::new(&[4, 8, 2], crate::nn::Activation::Linear, &mut rng).unwrap();
        assert_eq!(analytic_memory(&net), 464 + MODEL_METADATA_BYTES + 2 * LAYER_METADATA_BYTES);
        assert_eq!(analytic_memory(&crate::nn::DenseNet::empty(3)), MODEL_METADATA_BYTES);
    }
}
