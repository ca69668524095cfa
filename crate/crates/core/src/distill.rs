//! Teacher/student classifiers and temperature-scaled knowledge distillation.
//!
//! The student objective is
//! `(1 - alpha) * CE(labels, student) + alpha * T^2 * KL(softmax_T(teacher) || softmax_T(student))`,
//! averaged over the batch. The teacher is frozen: its logits are recomputed
//! per batch and treated as constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::loss::log_softmax_row;
use crate::nn::{shuffled_batches, softmax_cross_entropy, Activation, DenseNet, Optimizer, Parameterized, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillParams {
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        DistillParams { temperature: 2.0, alpha: 0.5 }
    }
}

impl DistillParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    #[serde(flatten)]
    pub params: DistillParams,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
}

/// Hidden-layer widths of a classifier; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub net: DenseNet,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        arch: &ClassifierArch,
        class_names: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::InvalidArgument("a classifier needs at least two classes".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend(&arch.hidden);
        widths.push(class_names.len());
        Ok(Classifier { net: DenseNet::new(&widths, Activation::Linear, rng)?, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.net.forward(features)
    }

    /// Class probabilities at temperature 1.
    pub fn probabilities(&self, features: &Matrix) -> Result<Matrix> {
        tempered_softmax(&self.logits(features)?, 1.0)
    }
}

impl Parameterized for Classifier {
    fn layers(&self) -> Vec<&crate::nn::Layer> {
        self.net.layers()
    }

    fn layers_mut(&mut self) -> Vec<&mut crate::nn::Layer> {
        self.net.layers_mut()
    }
}

/// Row-wise `softmax(logits / T)`.
pub fn tempered_softmax(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = out.row_mut(i);
        log_softmax_row(logits.row(i), temperature, row);
        row.iter_mut().for_each(|v| *v = v.exp());
    }
    Ok(out)
}

/// Distillation loss and its gradient with respect to the student logits.
pub fn distillation_loss(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    labels: &[usize],
    params: DistillParams,
) -> Result<(f64, Matrix)> {
    params.validate()?;
    if !student_logits.same_shape(teacher_logits) {
        return Err(Error::DimensionMismatch { expected: student_logits.cols(), got: teacher_logits.cols() });
    }
    let (ce, ce_grad) = softmax_cross_entropy(student_logits, labels)?;
    let DistillParams { temperature: t, alpha } = params;
    let n = student_logits.rows();
    let c = student_logits.cols();
    let mut lp_s = vec![0.0; c];
    let mut lp_t = vec![0.0; c];
    let mut kl = 0.0;
    let mut grad = ce_grad;
    for i in 0..n {
        log_softmax_row(student_logits.row(i), t, &mut lp_s);
        log_softmax_row(teacher_logits.row(i), t, &mut lp_t);
        let g = grad.row_mut(i);
        for k in 0..c {
            let pt = lp_t[k].exp();
            kl += pt * (lp_t[k] - lp_s[k]);
            let soft = t * (lp_s[k].exp() - pt) / n as f64;
            g[k] = (1.0 - alpha) * g[k] + alpha * soft;
        }
    }
    kl /= n as f64;
    let loss = (1.0 - alpha) * ce + alpha * t * t * kl;
    Ok((loss, grad))
}

/// Labels by row argmax (lowest index wins ties) and temperature-1 probabilities.
pub fn predict(model: &Classifier, features: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    let probs = model.probabilities(features)?;
    let labels = probs.iter_rows().map(argmax).collect();
    Ok((labels, probs))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Shared mini-batch loop. `batch_loss` maps (model, batch rows, batch
/// labels) to a loss and its gradient with respect to the logits.
fn fit_classifier<F>(
    model: &mut Classifier,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut batch_loss: F,
) -> Result<Vec<ClassifierEpoch>>
where
    F: FnMut(&Matrix, &Matrix, &[usize]) -> Result<(f64, Matrix)>,
{
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &*model);
    let n = data.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(n, cfg.batch_size, rng) {
            let x = data.features.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (logits, cache) = model.net.forward_cached(&x).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
                other => other,
            })?;
            let (loss, grad) = batch_loss(&x, &logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64 / n as f64;
            let (grads, _) = model.net.backward(&cache, &grad);
            opt.step(model, &grads);
        }
        if !model.parameters_finite() {
            return Err(Error::Divergence { epoch, loss: epoch_loss });
        }
        history.push(ClassifierEpoch { epoch, loss: epoch_loss });
    }
    Ok(history)
}

fn check_training_data(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    Ok(())
}

/// Plain cross-entropy training.
pub fn train_teacher(
    data: &Dataset,
    arch: &ClassifierArch,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<ClassifierEpoch>)> {
    cfg.validate()?;
    check_training_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Classifier::new(data.width(), arch, data.class_names.clone(), &mut rng)?;
    let history = fit_classifier(&mut model, data, cfg, &mut rng, |_, logits, y| softmax_cross_entropy(logits, y))?;
    Ok((model, history))
}

/// Trains a student against a frozen teacher under the distillation loss.
pub fn train_student(
    data: &Dataset,
    teacher: &Classifier,
    arch: &ClassifierArch,
    params: DistillParams,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<ClassifierEpoch>)> {
    params.validate()?;
    cfg.validate()?;
    check_training_data(data)?;
    if teacher.num_classes() != data.num_classes() {
        return Err(Error::DimensionMismatch { expected: data.num_classes(), got: teacher.num_classes() });
    }
    if teacher.input_dim() != data.width() {
        return Err(Error::DimensionMismatch { expected: data.width(), got: teacher.input_dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Classifier::new(data.width(), arch, data.class_names.clone(), &mut rng)?;
    let history = fit_classifier(&mut model, data, cfg, &mut rng, |x, logits, y| {
        let teacher_logits = teacher.logits(x)?;
        distillation_loss(logits, &teacher_logits, y, params)
    })?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn symmetric_logits_split_evenly() {
        for t in [0.5, 1.0, 7.0] {
            let p = tempered_softmax(&m(&[&[0.0, 0.0]]), t).unwrap();
            assert_eq!(p.as_slice(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn temperature_two_halves_logits() {
        let p = tempered_softmax(&m(&[&[2.0, 0.0]]), 2.0).unwrap();
        let e = std::f64::consts::E;
        let oracle = e / (e + 1.0);
        assert!((p.get(0, 0) - oracle).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.7310586).abs() < 1e-7);
        assert!((p.get(0, 1) - 0.2689414).abs() < 1e-7);
    }

    #[test]
    fn high_temperature_flattens() {
        let p = tempered_softmax(&m(&[&[5.0, -5.0]]), 1e6).unwrap();
        assert!(p.as_slice().iter().all(|v| (v - 0.5).abs() < 1e-5));
    }

    #[test]
    fn non_positive_temperature_rejected() {
        assert!(tempered_softmax(&m(&[&[1.0, 0.0]]), 0.0).is_err());
        let z = m(&[&[1.0, 0.0]]);
        assert!(distillation_loss(&z, &z, &[0], DistillParams { temperature: -1.0, alpha: 0.5 }).is_err());
        assert!(distillation_loss(&z, &z, &[0], DistillParams { temperature: 2.0, alpha: 1.5 }).is_err());
    }

    #[test]
    fn alpha_zero_is_cross_entropy() {
        let s = m(&[&[0.3, -1.0, 2.0], &[1.0, 0.5, -0.2]]);
        let t = m(&[&[2.0, 0.0, -1.0], &[-0.5, 0.1, 0.9]]);
        let (ce, ce_g) = softmax_cross_entropy(&s, &[2, 0]).unwrap();
        let (dl, dl_g) = distillation_loss(&s, &t, &[2, 0], DistillParams { temperature: 2.0, alpha: 0.0 }).unwrap();
        assert_eq!(ce, dl);
        assert_eq!(ce_g, dl_g);
    }

    #[test]
    fn alpha_one_matching_teacher_is_zero() {
        let s = m(&[&[0.3, -1.0, 2.0]]);
        let (loss, grad) = distillation_loss(&s, &s, &[1], DistillParams { temperature: 2.0, alpha: 1.0 }).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[3.0, 1.0]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn predicted_probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Classifier::new(3, &ClassifierArch { hidden: vec![4] }, vec!["a".into(), "b".into(), "c".into()], &mut rng)
            .unwrap();
        let x = crate::nn::standard_normal(6, 3, &mut rng);
        let (labels, probs) = predict(&c, &x).unwrap();
        assert_eq!(labels.len(), 6);
        for row in probs.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(predict(&c, &Matrix::zeros(1, 2)).is_err());
    }
}
