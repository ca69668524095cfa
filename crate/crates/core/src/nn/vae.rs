//! Variational autoencoder over standardized tabular rows.
//!
//! The encoder is a ReLU trunk followed by two linear heads producing the
//! posterior mean and log-variance of a diagonal Gaussian. Sampling uses the
//! reparameterization `z = mu + exp(logvar / 2) * noise` with caller-supplied
//! noise, so every forward pass is reproducible. The decoder maps `z` back to
//! the input width with a linear output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datapipe::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::dense::{Activation, DenseNet, GradientSet, Layer, Parameterized};
use crate::nn::loss::{vae_loss_with_grad, VaeLossValue};
use crate::nn::optim::{shuffled_batches, Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl VaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "latent_dim must be in [1, input_dim) = [1, {}), got {}",
                self.input_dim, self.latent_dim
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder_trunk: DenseNet,
    pub mu_head: Layer,
    pub logvar_head: Layer,
    pub decoder: DenseNet,
    pub latent_dim: usize,
    pub beta: f64,
}

/// Intermediate values of one VAE forward pass.
#[derive(Debug, Clone)]
pub struct VaeForward {
    pub mu: Matrix,
    pub logvar: Matrix,
    pub z: Matrix,
    pub x_hat: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `z = mu + exp(logvar / 2) * noise`, elementwise.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, noise: &Matrix) -> Result<Matrix> {
    if !mu.same_shape(logvar) || !mu.same_shape(noise) {
        return Err(Error::DimensionMismatch { expected: mu.cols(), got: noise.cols() });
    }
    let mut z = mu.clone();
    for ((zi, lv), e) in z.as_mut_slice().iter_mut().zip(logvar.as_slice()).zip(noise.as_slice()) {
        *zi += (0.5 * lv).exp() * e;
    }
    Ok(z)
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent")
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(arch: &VaeArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut enc_widths = vec![arch.input_dim];
        enc_widths.extend(&arch.encoder_hidden);
        let encoder_trunk =
            if enc_widths.len() == 1 { DenseNet::empty(arch.input_dim) } else { DenseNet::relu_stack(&enc_widths, rng)? };
        let h = encoder_trunk.out_dim;
        let mu_head = Layer::init(h, arch.latent_dim, Activation::Linear, rng);
        let logvar_head = Layer::init(h, arch.latent_dim, Activation::Linear, rng);
        let mut dec_widths = vec![arch.latent_dim];
        dec_widths.extend(&arch.decoder_hidden);
        dec_widths.push(arch.input_dim);
        let decoder = DenseNet::new(&dec_widths, Activation::Linear, rng)?;
        Ok(VaeModel { encoder_trunk, mu_head, logvar_head, decoder, latent_dim: arch.latent_dim, beta: arch.beta })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_trunk.in_dim
    }

    pub fn arch(&self) -> VaeArch {
        let enc = self.encoder_trunk.widths();
        let dec = self.decoder.widths();
        VaeArch {
            input_dim: self.input_dim(),
            encoder_hidden: enc[1..].to_vec(),
            latent_dim: self.latent_dim,
            decoder_hidden: dec[1..dec.len() - 1].to_vec(),
            beta: self.beta,
        }
    }

    pub fn encode(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.encoder_trunk.forward(batch)?;
        let (mu, _) = self.mu_head.forward(&h)?;
        let (logvar, _) = self.logvar_head.forward(&h)?;
        Ok((mu, logvar))
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z)
    }

    pub fn forward(&self, batch: &Matrix, noise: &Matrix) -> Result<VaeForward> {
        let (mu, logvar) = self.encode(batch)?;
        let z = reparameterize(&mu, &logvar, noise)?;
        let x_hat = self.decoder.forward(&z)?;
        Ok(VaeForward { mu, logvar, z, x_hat })
    }

    /// Loss on `batch` with fixed `noise`, and its gradient with respect to
    /// every parameter (canonical layer order).
    pub fn loss_and_grad(&self, batch: &Matrix, noise: &Matrix) -> Result<(VaeLossValue, GradientSet)> {
        let (h, trunk_cache) = self.encoder_trunk.forward_cached(batch)?;
        let (mu_pre, mu) = self.mu_head.forward(&h)?;
        let (lv_pre, logvar) = self.logvar_head.forward(&h)?;
        let z = reparameterize(&mu, &logvar, noise)?;
        let (x_hat, dec_cache) = self.decoder.forward_cached(&z)?;
        let (value, g) = vae_loss_with_grad(batch, &x_hat, &mu, &logvar, self.beta)?;

        let (dec_grads, dz) = self.decoder.backward(&dec_cache, &g.x_hat);
        let mut dmu = g.mu;
        let mut dlv = g.logvar;
        for i in 0..dz.as_slice().len() {
            let d = dz.as_slice()[i];
            dmu.as_mut_slice()[i] += d;
            dlv.as_mut_slice()[i] += d * noise.as_slice()[i] * 0.5 * (0.5 * logvar.as_slice()[i]).exp();
        }
        let (mu_grad, dh_mu) = self.mu_head.backward(&h, &mu_pre, &dmu);
        let (lv_grad, dh_lv) = self.logvar_head.backward(&h, &lv_pre, &dlv);
        let mut dh = dh_mu;
        for (a, b) in dh.as_mut_slice().iter_mut().zip(dh_lv.as_slice()) {
            *a += b;
        }
        let (trunk_grads, _) = self.encoder_trunk.backward(&trunk_cache, &dh);

        let mut layers = trunk_grads.layers;
        layers.push(mu_grad);
        layers.push(lv_grad);
        layers.extend(dec_grads.layers);
        Ok((value, GradientSet { layers }))
    }

    pub fn loss(&self, batch: &Matrix, noise: &Matrix) -> Result<VaeLossValue> {
        let f = self.forward(batch, noise)?;
        crate::nn::loss::vae_loss(batch, &f.x_hat, &f.mu, &f.logvar, self.beta)
    }
}

impl Parameterized for VaeModel {
    fn layers(&self) -> Vec<&Layer> {
        let mut v: Vec<&Layer> = self.encoder_trunk.layers.iter().collect();
        v.push(&self.mu_head);
        v.push(&self.logvar_head);
        v.extend(self.decoder.layers.iter());
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut v: Vec<&mut Layer> = self.encoder_trunk.layers.iter_mut().collect();
        v.push(&mut self.mu_head);
        v.push(&mut self.logvar_head);
        v.extend(self.decoder.layers.iter_mut());
        v
    }
}

/// Trains a VAE with seeded shuffling and seeded reparameterization noise.
///
/// One RNG stream, seeded from `cfg.seed`, drives initialization, batch
/// order and noise, so equal seeds give bit-identical models.
pub fn train_vae(data: &Dataset, arch: &VaeArch, cfg: &TrainConfig) -> Result<(VaeModel, Vec<VaeEpoch>)> {
    cfg.validate()?;
    if arch.input_dim != data.width() {
        return Err(Error::DimensionMismatch { expected: arch.input_dim, got: data.width() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VaeModel::new(arch, &mut rng)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model);
    let n = data.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = VaeLossValue { loss: 0.0, recon: 0.0, kl: 0.0 };
        for batch in shuffled_batches(n, cfg.batch_size, &mut rng) {
            let x = data.features.select_rows(&batch);
            let noise = standard_normal(x.rows(), model.latent_dim, &mut rng);
            let (value, grads) = model.loss_and_grad(&x, &noise).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
                other => other,
            })?;
            if !value.loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: value.loss });
            }
            let w = batch.len() as f64 / n as f64;
            acc.loss += w * value.loss;
            acc.recon += w * value.recon;
            acc.kl += w * value.kl;
            opt.step(&mut model, &grads);
        }
        if !model.parameters_finite() {
            return Err(Error::Divergence { epoch, loss: acc.loss });
        }
        history.push(VaeEpoch { epoch, loss: acc.loss, recon: acc.recon, kl: acc.kl });
    }
    Ok((model, history))
}

/// Replaces each row's features by its posterior mean, keeping labels and order.
pub fn encode_dataset(model: &VaeModel, data: &Dataset) -> Result<Dataset> {
    let (mu, _) = model.encode(&data.features)?;
    let names = (0..model.latent_dim).map(|i| format!("z{i}")).collect();
    Dataset::new(mu, data.labels.clone(), names, data.class_names.clone())
}
