//! Losses with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row-wise log-softmax of `logits / temperature`, max-shifted.
pub(crate) fn log_softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v / temperature - max;
        sum += o.exp();
    }
    let lse = sum.ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

fn check_labels(labels: &[usize], logits: &Matrix) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch { expected: logits.rows(), got: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::LabelOutOfRange { label: bad, classes: logits.cols() });
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, and its
/// gradient `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(labels, logits)?;
    let n = logits.rows();
    let c = logits.cols();
    let mut grad = Matrix::zeros(n, c);
    let mut logp = vec![0.0; c];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        log_softmax_row(logits.row(i), 1.0, &mut logp);
        loss -= logp[y];
        for (g, lp) in grad.row_mut(i).iter_mut().zip(&logp) {
            *g = lp.exp() / n as f64;
        }
        grad.row_mut(i)[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossValue {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Gradients of the VAE objective with respect to the reconstruction and the
/// posterior parameters.
#[derive(Debug, Clone)]
pub struct VaeLossGrad {
    pub x_hat: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
}

fn vae_check(x: &Matrix, x_hat: &Matrix, mu: &Matrix, logvar: &Matrix, beta: f64) -> Result<()> {
    if !x.same_shape(x_hat) {
        return Err(Error::DimensionMismatch { expected: x.cols(), got: x_hat.cols() });
    }
    if !mu.same_shape(logvar) || mu.rows() != x.rows() {
        return Err(Error::DimensionMismatch { expected: mu.cols(), got: logvar.cols() });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {beta}")));
    }
    if !(x.is_finite() && x_hat.is_finite() && mu.is_finite() && logvar.is_finite()) {
        return Err(Error::NonFinite("vae loss inputs".into()));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Reconstruction (per-row squared error) plus `beta` times the closed-form
/// Gaussian KL to the standard normal prior, both averaged over rows.
pub fn vae_loss(x: &Matrix, x_hat: &Matrix, mu: &Matrix, logvar: &Matrix, beta: f64) -> Result<VaeLossValue> {
    Ok(vae_loss_with_grad(x, x_hat, mu, logvar, beta)?.0)
}

pub fn vae_loss_with_grad(
    x: &Matrix,
    x_hat: &Matrix,
    mu: &Matrix,
    logvar: &Matrix,
    beta: f64,
) -> Result<(VaeLossValue, VaeLossGrad)> {
    vae_check(x, x_hat, mu, logvar, beta)?;
    let n = x.rows() as f64;

    let mut recon = 0.0;
    let mut g_xhat = Matrix::zeros(x.rows(), x.cols());
    for ((g, a), b) in g_xhat.as_mut_slice().iter_mut().zip(x.as_slice()).zip(x_hat.as_slice()) {
        let r = a - b;
        recon += r * r;
        *g = -2.0 * r / n;
    }
    recon /= n;

    let mut kl = 0.0;
    let mut g_mu = Matrix::zeros(mu.rows(), mu.cols());
    let mut g_lv = Matrix::zeros(mu.rows(), mu.cols());
    for (i, (&m, &lv)) in mu.as_slice().iter().zip(logvar.as_slice()).enumerate() {
        let e = lv.exp();
        kl += -0.5 * (1.0 + lv - m * m - e);
        g_mu.as_mut_slice()[i] = beta * m / n;
        g_lv.as_mut_slice()[i] = beta * 0.5 * (e - 1.0) / n;
    }
    kl /= n;

    let loss = recon + beta * kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite("vae loss".into()));
    }
    Ok((VaeLossValue { loss, recon, kl }, VaeLossGrad { x_hat: g_xhat, mu: g_mu, logvar: g_lv }))
}
