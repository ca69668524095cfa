use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{GradientSet, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch_size: 64, learning_rate: 0.001, seed: 0, optimizer: OptimizerKind::Adam }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// First-order optimizer state, aligned with a model's canonical layer order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new<M: Parameterized + ?Sized>(kind: OptimizerKind, lr: f64, model: &M) -> Self {
        let n = match kind {
            OptimizerKind::Adam => model.num_parameters(),
            OptimizerKind::Sgd => 0,
        };
        Optimizer { kind, lr, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &GradientSet) {
        debug_assert!(grads.shapes_match(model));
        self.step += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.step), 1.0 - BETA2.powi(self.step));
        let mut at = 0;
        for (layer, g) in model.layers_mut().into_iter().zip(&grads.layers) {
            for (p, gp) in layer.weights.iter_mut().zip(&g.weights).chain(layer.bias.iter_mut().zip(&g.bias)) {
                match self.kind {
                    OptimizerKind::Sgd => *p -= self.lr * gp,
                    OptimizerKind::Adam => {
                        let m = &mut self.m[at];
                        let v = &mut self.v[at];
                        *m = BETA1 * *m + (1.0 - BETA1) * gp;
                        *v = BETA2 * *v + (1.0 - BETA2) * gp * gp;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
                    }
                }
                at += 1;
            }
        }
    }
}

/// Shuffled mini-batches of row indices; the last batch may be short.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
