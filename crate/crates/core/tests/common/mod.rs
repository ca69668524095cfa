#![allow(dead_code)]

use std::path::{Path, PathBuf};

use idsx_core::config::PipelineConfig;
use idsx_core::datapipe::Dataset;
use idsx_core::synth::{small_config, write_schema, write_table_csv, SyntheticSpec};
use idsx_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, with a floor so all-zero gradients compare as equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Two or more Gaussian blobs in `p` dimensions, class `i % classes` for row `i`.
pub fn blobs(n: usize, p: usize, classes: usize, separation: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| (0..p).map(|j| if j % classes == c { separation } else { 0.0 }).collect())
        .collect();
    let mut data = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..p {
            data.push(centers[c][j] + r.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset::new(
        Matrix::from_vec(n, p, data).unwrap(),
        labels,
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..classes).map(|c| format!("c{c}")).collect(),
    )
    .unwrap()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Writes a synthetic table and schema into `dir` and returns a small-data config for it.
pub fn synthetic_config(dir: &Path, spec: &SyntheticSpec) -> PipelineConfig {
    let table = spec.generate().unwrap();
    let data = dir.join("data.csv");
    let schema = dir.join("schema.json");
    write_table_csv(&table, &data).unwrap();
    write_schema(&table.schema, &schema).unwrap();
    small_config(data, schema)
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// Smallest |pre-activation| over the ReLU layers of `net` on `x`. Finite
/// differences are only meaningful away from the ReLU kink.
pub fn relu_margin(net: &idsx_core::nn::DenseNet, x: &Matrix) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in &net.layers {
        let (pre, out) = layer.forward(&h).unwrap();
        if layer.activation == idsx_core::nn::Activation::Relu {
            margin = pre.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
        }
        h = out;
    }
    margin
}

/// Kink margin required before a network instance is used in a gradient check.
pub const KINK_MARGIN: f64 = 1e-2;
