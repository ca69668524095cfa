//! Break-down attribution of a single prediction.
//!
//! A prediction `f(x*)` is decomposed as `v0 + sum_j v(j, x*)` where `v0` is
//! the mean prediction over a background set and `v(j, x*)` is the change in
//! the expected prediction when feature `j` is additionally fixed to its
//! value in `x*`, walking the features in a chosen order.
//!
//! Conditional expectations are estimated by substitution: the fixed columns
//! of every background row are overwritten with the instance's values and
//! the predictions averaged. With every feature fixed the expectation is
//! `f(x*)` itself, so the decomposition telescopes and is exact up to
//! floating-point summation.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{Preprocessor, Row};
use crate::distill::{tempered_softmax, Classifier};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::VaeModel;

/// Scalar-valued model under explanation.
pub trait PredictFunction: Sync {
    fn predict(&self, row: &[f64]) -> f64;

    fn predict_batch(&self, rows: &Matrix) -> Vec<f64> {
        rows.iter_rows().map(|r| self.predict(r)).collect()
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> PredictFunction for F {
    fn predict(&self, row: &[f64]) -> f64 {
        self(row)
    }
}

/// Probability a classifier assigns to one class, optionally behind a VAE
/// encoder (features are first mapped to posterior means).
pub struct ClassProbability<'a> {
    pub classifier: &'a Classifier,
    pub encoder: Option<&'a VaeModel>,
    pub target: usize,
}

impl<'a> ClassProbability<'a> {
    pub fn new(classifier: &'a Classifier, encoder: Option<&'a VaeModel>, target: usize) -> Result<Self> {
        if target >= classifier.num_classes() {
            return Err(Error::LabelOutOfRange { label: target, classes: classifier.num_classes() });
        }
        if let Some(enc) = encoder {
            if enc.latent_dim != classifier.input_dim() {
                return Err(Error::DimensionMismatch { expected: classifier.input_dim(), got: enc.latent_dim });
            }
        }
        Ok(ClassProbability { classifier, encoder, target })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.map_or(self.classifier.input_dim(), VaeModel::input_dim)
    }

    fn probabilities(&self, rows: &Matrix) -> Result<Matrix> {
        let feats = match self.encoder {
            Some(enc) => enc.encode(rows)?.0,
            None => rows.clone(),
        };
        tempered_softmax(&self.classifier.logits(&feats)?, 1.0)
    }
}

impl PredictFunction for ClassProbability<'_> {
    fn predict(&self, row: &[f64]) -> f64 {
        let m = Matrix::from_vec(1, row.len(), row.to_vec()).expect("single row");
        self.predict_batch(&m)[0]
    }

    fn predict_batch(&self, rows: &Matrix) -> Vec<f64> {
        let probs = self.probabilities(rows).expect("model input width checked by caller");
        probs.iter_rows().map(|r| r[self.target]).collect()
    }
}

/// Rows over which expectations are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Matrix,
}

impl BackgroundSet {
    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::InvalidArgument("background set is empty".into()));
        }
        Ok(BackgroundSet { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub index: usize,
    pub name: String,
    pub value: f64,
    /// `v0` plus this and every earlier contribution.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub baseline: f64,
    pub contributions: Vec<Contribution>,
    pub final_prediction: f64,
    pub ordering: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class_name: Option<String>,
}

impl Attribution {
    /// `|v0 + sum(v) - f(x*)|`.
    pub fn local_accuracy_gap(&self) -> f64 {
        let total: f64 = self.baseline + self.contributions.iter().map(|c| c.value).sum::<f64>();
        (total - self.final_prediction).abs()
    }

    /// Contribution value per feature index.
    pub fn values_by_feature(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.contributions.len()];
        for c in &self.contributions {
            v[c.index] = c.value;
        }
        v
    }

    /// Waterfall table: an intercept row, then one row per contribution in
    /// walk order with the running prediction.
    pub fn write_waterfall_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "Mapped Feature,Contribution,Cumulative Prediction")?;
        writeln!(w, "Intercept,{},{}", self.baseline, self.baseline)?;
        for c in &self.contributions {
            writeln!(w, "{},{},{}", csv_field(&c.name), c.value, c.cumulative)?;
        }
        Ok(())
    }

    pub fn save_waterfall_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_waterfall_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn check_instance(bg: &BackgroundSet, instance: &[f64]) -> Result<()> {
    if instance.len() != bg.width() {
        return Err(Error::DimensionMismatch { expected: bg.width(), got: instance.len() });
    }
    Ok(())
}

/// Mean of `f` over the background rows.
pub fn mean_prediction<F: PredictFunction + ?Sized>(f: &F, bg: &BackgroundSet) -> f64 {
    f.predict_batch(bg.rows()).iter().sum::<f64>() / bg.len() as f64
}

/// `E[f(x) | x_fixed = instance_fixed]`, estimated by substitution into the
/// background rows. Fixing every feature returns `f(instance)` exactly.
pub fn conditional_expectation<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
    fixed: &[usize],
) -> Result<f64> {
    check_instance(bg, instance)?;
    let p = bg.width();
    let mut mask = vec![false; p];
    for &j in fixed {
        if j >= p {
            return Err(Error::InvalidArgument(format!("feature index {j} out of range for {p} features")));
        }
        mask[j] = true;
    }
    if mask.iter().all(|&m| m) {
        return Ok(f.predict(instance));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(mean_prediction(f, bg));
    }
    let mut rows = bg.rows().clone();
    for i in 0..rows.rows() {
        for (j, v) in rows.row_mut(i).iter_mut().enumerate() {
            if mask[j] {
                *v = instance[j];
            }
        }
    }
    Ok(f.predict_batch(&rows).iter().sum::<f64>() / bg.len() as f64)
}

/// `E[f | x_J, x_L] - E[f | x_J]` for disjoint feature sets `L` and `J`.
pub fn conditional_difference<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
    added: &[usize],
    given: &[usize],
) -> Result<f64> {
    if added.iter().any(|a| given.contains(a)) {
        return Err(Error::InvalidArgument("feature sets must be disjoint".into()));
    }
    let both: Vec<usize> = given.iter().chain(added).copied().collect();
    Ok(conditional_expectation(f, bg, instance, &both)? - conditional_expectation(f, bg, instance, given)?)
}

/// Pairwise interaction: the joint effect of fixing `a` and `b` minus the
/// two single-feature effects, all measured from the unconditioned baseline.
pub fn pairwise_interaction<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
    a: usize,
    b: usize,
) -> Result<f64> {
    if a == b {
        return Err(Error::InvalidArgument("interaction needs two distinct features".into()));
    }
    let joint = conditional_difference(f, bg, instance, &[a, b], &[])?;
    let da = conditional_difference(f, bg, instance, &[a], &[])?;
    let db = conditional_difference(f, bg, instance, &[b], &[])?;
    Ok(joint - da - db)
}

/// Features sorted by `|E[f | x_j] - v0|`, largest first; ties keep the
/// lower index first.
pub fn marginal_importance_order<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
) -> Result<Vec<usize>> {
    check_instance(bg, instance)?;
    let v0 = mean_prediction(f, bg);
    let deltas = (0..bg.width())
        .into_par_iter()
        .map(|j| conditional_expectation(f, bg, instance, &[j]).map(|e| (e - v0).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..bg.width()).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]));
    Ok(order)
}

fn is_permutation(order: &[usize], p: usize) -> bool {
    let mut seen = vec![false; p];
    order.len() == p && order.iter().all(|&j| j < p && !std::mem::replace(&mut seen[j], true))
}

/// Sequential break-down along `ordering` (or the marginal-importance order).
pub fn breakdown<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
    ordering: Option<&[usize]>,
) -> Result<Attribution> {
    let names: Vec<String> = (0..bg.width()).map(|j| format!("x{j}")).collect();
    breakdown_named(f, bg, instance, ordering, &names)
}

pub fn breakdown_named<F: PredictFunction + ?Sized>(
    f: &F,
    bg: &BackgroundSet,
    instance: &[f64],
    ordering: Option<&[usize]>,
    names: &[String],
) -> Result<Attribution> {
    check_instance(bg, instance)?;
    let p = bg.width();
    if names.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: names.len() });
    }
    let order = match ordering {
        Some(o) if !is_permutation(o, p) => {
            return Err(Error::InvalidArgument(format!("ordering {o:?} is not a permutation of 0..{p}")))
        }
        Some(o) => o.to_vec(),
        None => marginal_importance_order(f, bg, instance)?,
    };
    let baseline = mean_prediction(f, bg);
    let mut prev = baseline;
    let mut running = baseline;
    let mut contributions = Vec::with_capacity(p);
    for i in 0..p {
        let cur = conditional_expectation(f, bg, instance, &order[..=i])?;
        let value = cur - prev;
        running += value;
        contributions.push(Contribution { index: order[i], name: names[order[i]].clone(), value, cumulative: running });
        prev = cur;
    }
    Ok(Attribution {
        baseline,
        contributions,
        final_prediction: prev,
        ordering: order,
        target_class: None,
        target_class_name: None,
    })
}

/// An instance to explain, before or after preprocessing.
#[derive(Debug, Clone)]
pub enum Instance {
    Raw(Row),
    Preprocessed(Vec<f64>),
}

/// Attributes a classifier's probability for `target_class` to the
/// preprocessed input features. With `encoder` set the classifier is applied
/// to the VAE posterior mean of the features.
pub fn explain_instance(
    model: &Classifier,
    encoder: Option<&VaeModel>,
    pre: &Preprocessor,
    bg: &BackgroundSet,
    instance: &Instance,
    target_class: usize,
) -> Result<Attribution> {
    let f = ClassProbability::new(model, encoder, target_class)?;
    if f.input_dim() != pre.output_dim() {
        return Err(Error::DimensionMismatch { expected: pre.output_dim(), got: f.input_dim() });
    }
    let row = match instance {
        Instance::Raw(r) => pre.transform_row(r)?,
        Instance::Preprocessed(v) => v.clone(),
    };
    let mut a = breakdown_named(&f, bg, &row, None, pre.output_feature_names())?;
    a.target_class = Some(target_class);
    a.target_class_name = Some(model.class_names[target_class].clone());
    Ok(a)
}

/// Attribution in the latent space: `instance` and `bg` are latent codes.
pub fn explain_latent(model: &Classifier, bg: &BackgroundSet, instance: &[f64], target_class: usize) -> Result<Attribution> {
    let f = ClassProbability::new(model, None, target_class)?;
    let names: Vec<String> = (0..bg.width()).map(|j| format!("z{j}")).collect();
    let mut a = breakdown_named(&f, bg, instance, None, &names)?;
    a.target_class = Some(target_class);
    a.target_class_name = Some(model.class_names[target_class].clone());
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg(rows: &[&[f64]]) -> BackgroundSet {
        BackgroundSet::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn mean_prediction_cases() {
        let b = bg(&[&[0.0], &[2.0]]);
        assert_eq!(mean_prediction(&|_: &[f64]| 4.5, &b), 4.5);
        assert_eq!(mean_prediction(&|r: &[f64]| r[0], &b), 1.0);
        let single = bg(&[&[3.0]]);
        assert_eq!(mean_prediction(&|r: &[f64]| r[0] * r[0], &single), 9.0);
        assert!(BackgroundSet::new(Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn conditional_expectation_endpoints() {
        let f = |r: &[f64]| r[0] * r[1] + r[1].sin();
        let b = bg(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.3, 0.3]]);
        let x = [0.7, -1.1];
        assert_eq!(conditional_expectation(&f, &b, &x, &[]).unwrap(), mean_prediction(&f, &b));
        assert_eq!(conditional_expectation(&f, &b, &x, &[1, 0]).unwrap(), f(&x));
        assert!(conditional_expectation(&f, &b, &x, &[2]).is_err());
    }

    #[test]
    fn additive_substitution() {
        let f = |r: &[f64]| r[0] + r[1];
        let b = bg(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let e = conditional_expectation(&f, &b, &[3.0, 5.0], &[0]).unwrap();
        assert_eq!(e, 3.0);
    }

    #[test]
    fn importance_order() {
        let b = bg(&[&[1.0, 1.0], &[-1.0, -1.0]]);
        let f = |r: &[f64]| 10.0 * r[0] + r[1];
        assert_eq!(marginal_importance_order(&f, &b, &[1.0, 1.0]).unwrap(), vec![0, 1]);
        let g = |r: &[f64]| r[0] + 10.0 * r[1];
        assert_eq!(marginal_importance_order(&g, &b, &[1.0, 1.0]).unwrap(), vec![1, 0]);
        let c = |_: &[f64]| 1.0;
        let b3 = bg(&[&[0.0, 0.0, 0.0]]);
        assert_eq!(marginal_importance_order(&c, &b3, &[1.0, 2.0, 3.0]).unwrap(), vec![0, 1, 2]);
        let tie = |r: &[f64]| r[0] + r[1] + 0.1 * r[2];
        assert_eq!(marginal_importance_order(&tie, &b3, &[1.0, 1.0, 1.0]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn constant_function_has_no_contributions() {
        let f = |_: &[f64]| 0.25;
        let b = bg(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let a = breakdown(&f, &b, &[9.0, 9.0], None).unwrap();
        assert_eq!(a.baseline, 0.25);
        assert!(a.contributions.iter().all(|c| c.value == 0.0));
    }

    #[test]
    fn malformed_ordering_rejected() {
        let f = |r: &[f64]| r[0];
        let b = bg(&[&[1.0, 2.0]]);
        assert!(breakdown(&f, &b, &[0.0, 0.0], Some(&[0, 0])).is_err());
        assert!(breakdown(&f, &b, &[0.0, 0.0], Some(&[0])).is_err());
        assert!(breakdown(&f, &b, &[0.0, 0.0], Some(&[0, 2])).is_err());
    }

    #[test]
    fn interaction_of_product() {
        // f = x0 * x1 over a centered background: singles vanish, the joint effect is x0*x1.
        let f = |r: &[f64]| r[0] * r[1];
        let b = bg(&[&[1.0, 1.0], &[-1.0, -1.0], &[1.0, -1.0], &[-1.0, 1.0]]);
        let x = [2.0, 3.0];
        assert_eq!(pairwise_interaction(&f, &b, &x, 0, 1).unwrap(), 6.0);
        assert_eq!(conditional_difference(&f, &b, &x, &[1], &[0]).unwrap(), 6.0);
        assert!(conditional_difference(&f, &b, &x, &[0], &[0]).is_err());
    }

    #[test]
    fn waterfall_rows_accumulate() {
        let f = |r: &[f64]| 2.0 * r[0] - r[1];
        let b = bg(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let a = breakdown(&f, &b, &[3.0, -2.0], None).unwrap();
        let mut out = Vec::new();
        a.write_waterfall_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Mapped Feature,Contribution,Cumulative Prediction");
        assert!(lines[1].starts_with("Intercept,0.5,0.5"));
        assert_eq!(lines.len(), 4);
        assert_eq!(a.contributions.last().unwrap().cumulative, 8.0);
    }
}
