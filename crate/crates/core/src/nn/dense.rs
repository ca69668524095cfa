//! Fully connected layers and networks with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// `y = act(W x + b)` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of a loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// One gradient per layer, in the owning model's canonical layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer { in_dim, out_dim, activation, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Uniform He-style initialization: `W ~ U(-a, a)` with `a = sqrt(6 / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / in_dim.max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-a..a)).collect();
        Layer { in_dim, out_dim, activation, weights, bias: vec![0.0; out_dim] }
    }

    pub fn num_parameters(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: x.cols() });
        }
        let n = x.rows();
        let mut pre = Matrix::zeros(n, self.out_dim);
        for i in 0..n {
            let xi = x.row(i);
            let zi = pre.row_mut(i);
            for (o, z) in zi.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias[o];
                for (wj, xj) in w.iter().zip(xi) {
                    acc += wj * xj;
                }
                *z = acc;
            }
        }
        let out = match self.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => {
                let mut out = pre.clone();
                for v in out.as_mut_slice() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
        };
        Ok((pre, out))
    }

    /// Backpropagates `grad_out` (dL/d output) through the layer.
    /// Returns the parameter gradient and dL/d input.
    pub fn backward(&self, input: &Matrix, pre: &Matrix, grad_out: &Matrix) -> (LayerGrad, Matrix) {
        let n = input.rows();
        let mut dz = grad_out.clone();
        if self.activation == Activation::Relu {
            for (g, z) in dz.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.out_dim];
        let mut dx = Matrix::zeros(n, self.in_dim);
        for i in 0..n {
            let xi = input.row(i);
            let dzi = dz.row(i);
            for (o, &d) in dzi.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for (g, xj) in row.iter_mut().zip(xi) {
                    *g += d * xj;
                }
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (dxj, wj) in dx.row_mut(i).iter_mut().zip(w) {
                    *dxj += d * wj;
                }
            }
        }
        (LayerGrad { weights: gw, bias: gb }, dx)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Anything made of dense layers: exposes them in a fixed canonical order so
/// optimizers, gradient sets and flat parameter views all line up.
pub trait Parameterized {
    fn layers(&self) -> Vec<&Layer>;
    fn layers_mut(&mut self) -> Vec<&mut Layer>;

    fn num_parameters(&self) -> usize {
        self.layers().iter().map(|l| l.num_parameters()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn set_flat_parameters(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    fn parameters_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }
}

/// Number of learnable parameters: per layer `out·in + out`, summed.
pub fn count_parameters<M: Parameterized + ?Sized>(model: &M) -> usize {
    model.num_parameters()
}

impl GradientSet {
    pub fn zeros_like<M: Parameterized + ?Sized>(model: &M) -> Self {
        GradientSet {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn shapes_match<M: Parameterized + ?Sized>(&self, model: &M) -> bool {
        let layers = model.layers();
        layers.len() == self.layers.len()
            && layers
                .iter()
                .zip(&self.layers)
                .all(|(l, g)| l.weights.len() == g.weights.len() && l.bias.len() == g.bias.len())
    }
}

/// Saved activations from a forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub in_dim: usize,
    pub out_dim: usize,
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Network with the given layer widths: ReLU on hidden layers and
    /// `output` on the last. A single width gives an empty (identity) net.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::init(w[0], w[1], if i + 1 == last { output } else { Activation::Relu }, rng))
            .collect();
        Ok(DenseNet { in_dim: widths[0], out_dim: widths[last], layers })
    }

    /// Same as [`DenseNet::new`] but every layer uses ReLU.
    pub fn relu_stack<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        Self::new(widths, Activation::Relu, rng)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::InvalidArgument("no layers".into()))?;
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimensionMismatch { expected: w[0].out_dim, got: w[1].in_dim });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidArgument("layer parameter shape mismatch".into()));
            }
        }
        Ok(DenseNet { in_dim: first.in_dim, out_dim: layers[layers.len() - 1].out_dim, layers })
    }

    pub fn empty(dim: usize) -> Self {
        DenseNet { in_dim: dim, out_dim: dim, layers: Vec::new() }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim];
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch)?.0)
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: batch.cols() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for l in &self.layers {
            let (z, a) = l.forward(&x)?;
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((x, ForwardCache { inputs, pre }))
    }

    /// Returns parameter gradients and dL/d input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> (GradientSet, Matrix) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (lg, dx) = l.backward(&cache.inputs[i], &cache.pre[i], &g);
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        (GradientSet { layers: grads }, g)
    }
}

impl Parameterized for DenseNet {
    fn layers(&self) -> Vec<&Layer> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        self.layers.iter_mut().collect()
    }
}
