//! Finite-difference checks for every analytic gradient, plus the
//! small-step descent and KL sign properties.

mod common;

use common::{central_diff, normal_matrix, relative_error, relu_margin, rng, FD_TOLERANCE, KINK_MARGIN};
use idsx_core::distill::{distillation_loss, DistillParams};
use idsx_core::nn::{
    softmax_cross_entropy, vae_loss, vae_loss_with_grad, Activation, DenseNet, Optimizer, OptimizerKind,
    Parameterized, VaeArch, VaeModel,
};
use idsx_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

const TRIALS: u64 = 25;

fn reshape(like: &Matrix, data: &[f64]) -> Matrix {
    Matrix::from_vec(like.rows(), like.cols(), data.to_vec()).unwrap()
}

fn random_labels(n: usize, c: usize, r: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| r.gen_range(0..c)).collect()
}

#[test]
fn cross_entropy_logit_gradient() {
    for trial in 0..TRIALS {
        let mut r = rng(trial);
        let (n, c) = (r.gen_range(1..6), r.gen_range(2..6));
        let logits = normal_matrix(n, c, 3.0, &mut r);
        let labels = random_labels(n, c, &mut r);
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let fd = central_diff(logits.as_slice(), |v| softmax_cross_entropy(&reshape(&logits, v), &labels).unwrap().0);
        let err = relative_error(grad.as_slice(), &fd);
        assert!(err < FD_TOLERANCE, "trial {trial}: rel err {err}");
    }
}

#[test]
fn cross_entropy_parameter_gradient_through_network() {
    let mut r = rng(100);
    for trial in 0..TRIALS {
        // 3 -> 5 -> 3: 20 + 18 = 38 parameters
        let (mut net, x) = loop {
            let net = DenseNet::new(&[3, 5, 3], Activation::Linear, &mut r).unwrap();
            let x = normal_matrix(4, 3, 1.0, &mut r);
            if relu_margin(&net, &x) > KINK_MARGIN {
                break (net, x);
            }
        };
        let labels = random_labels(4, 3, &mut r);
        let (logits, cache) = net.forward_cached(&x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (grads, _) = net.backward(&cache, &dlogits);
        let theta = net.flat_parameters();
        let fd = central_diff(&theta, |v| {
            net.set_flat_parameters(v);
            softmax_cross_entropy(&net.forward(&x).unwrap(), &labels).unwrap().0
        });
        let err = relative_error(&grads.flatten(), &fd);
        assert!(err < FD_TOLERANCE, "trial {trial}: rel err {err}");
    }
}

#[test]
fn vae_loss_gradient_wrt_outputs_and_posterior() {
    for trial in 0..TRIALS {
        let mut r = rng(200 + trial);
        let (n, d, k) = (r.gen_range(1..5), r.gen_range(2..5), r.gen_range(1..3));
        let beta = r.gen_range(0.0..2.0);
        let x = normal_matrix(n, d, 1.0, &mut r);
        let x_hat = normal_matrix(n, d, 1.0, &mut r);
        let mu = normal_matrix(n, k, 1.0, &mut r);
        let lv = normal_matrix(n, k, 0.5, &mut r);
        let (_, g) = vae_loss_with_grad(&x, &x_hat, &mu, &lv, beta).unwrap();
        let fd_xhat = central_diff(x_hat.as_slice(), |v| vae_loss(&x, &reshape(&x_hat, v), &mu, &lv, beta).unwrap().loss);
        let fd_mu = central_diff(mu.as_slice(), |v| vae_loss(&x, &x_hat, &reshape(&mu, v), &lv, beta).unwrap().loss);
        let fd_lv = central_diff(lv.as_slice(), |v| vae_loss(&x, &x_hat, &mu, &reshape(&lv, v), beta).unwrap().loss);
        for (name, a, b) in [("x_hat", &g.x_hat, fd_xhat), ("mu", &g.mu, fd_mu), ("logvar", &g.logvar, fd_lv)] {
            let err = relative_error(a.as_slice(), &b);
            assert!(err < FD_TOLERANCE, "trial {trial} {name}: rel err {err}");
        }
    }
}

#[test]
fn vae_parameter_gradient_through_reparameterization() {
    let mut r = rng(300);
    for trial in 0..TRIALS {
        // trunk 3->2 (8), heads 2->1 (3 + 3), decoder 1->2->3 (4 + 9): 27 parameters
        let arch = VaeArch { input_dim: 3, encoder_hidden: vec![2], latent_dim: 1, decoder_hidden: vec![2], beta: 0.7 };
        let (mut model, x, noise) = loop {
            let model = VaeModel::new(&arch, &mut r).unwrap();
            let x = normal_matrix(3, 3, 1.0, &mut r);
            let noise = normal_matrix(3, 1, 1.0, &mut r);
            let z = model.forward(&x, &noise).unwrap().z;
            if relu_margin(&model.encoder_trunk, &x) > KINK_MARGIN && relu_margin(&model.decoder, &z) > KINK_MARGIN {
                break (model, x, noise);
            }
        };
        let (_, grads) = model.loss_and_grad(&x, &noise).unwrap();
        let theta = model.flat_parameters();
        let fd = central_diff(&theta, |v| {
            model.set_flat_parameters(v);
            model.loss(&x, &noise).unwrap().loss
        });
        let err = relative_error(&grads.flatten(), &fd);
        assert!(err < FD_TOLERANCE, "trial {trial}: rel err {err}");
    }
}

#[test]
fn distillation_logit_gradient() {
    for trial in 0..TRIALS {
        let mut r = rng(400 + trial);
        let (n, c) = (r.gen_range(1..5), r.gen_range(2..5));
        let params = DistillParams { temperature: r.gen_range(0.5..4.0), alpha: r.gen_range(0.0..=1.0) };
        let student = normal_matrix(n, c, 2.0, &mut r);
        let teacher = normal_matrix(n, c, 2.0, &mut r);
        let labels = random_labels(n, c, &mut r);
        let (_, grad) = distillation_loss(&student, &teacher, &labels, params).unwrap();
        let fd = central_diff(student.as_slice(), |v| {
            distillation_loss(&reshape(&student, v), &teacher, &labels, params).unwrap().0
        });
        let err = relative_error(grad.as_slice(), &fd);
        assert!(err < FD_TOLERANCE, "trial {trial} {params:?}: rel err {err}");
    }
}

#[test]
fn distillation_reference_case_two_by_three() {
    let mut r = rng(7);
    let student = normal_matrix(2, 3, 1.0, &mut r);
    let teacher = normal_matrix(2, 3, 1.0, &mut r);
    let labels = [2, 0];
    let params = DistillParams { temperature: 2.0, alpha: 0.5 };
    let (_, grad) = distillation_loss(&student, &teacher, &labels, params).unwrap();
    let fd = central_diff(student.as_slice(), |v| distillation_loss(&reshape(&student, v), &teacher, &labels, params).unwrap().0);
    assert!(relative_error(grad.as_slice(), &fd) < FD_TOLERANCE);
}

#[test]
fn distillation_parameter_gradient_through_student() {
    let mut r = rng(500);
    for trial in 0..TRIALS {
        let (mut student, x) = loop {
            let net = DenseNet::new(&[3, 4, 2], Activation::Linear, &mut r).unwrap();
            let x = normal_matrix(5, 3, 1.0, &mut r);
            if relu_margin(&net, &x) > KINK_MARGIN {
                break (net, x);
            }
        };
        let teacher = DenseNet::new(&[3, 6, 2], Activation::Linear, &mut r).unwrap();
        let labels = random_labels(5, 2, &mut r);
        let t_logits = teacher.forward(&x).unwrap();
        let params = DistillParams::default();
        let (s_logits, cache) = student.forward_cached(&x).unwrap();
        let (_, dlogits) = distillation_loss(&s_logits, &t_logits, &labels, params).unwrap();
        let (grads, _) = student.backward(&cache, &dlogits);
        let theta = student.flat_parameters();
        let fd = central_diff(&theta, |v| {
            student.set_flat_parameters(v);
            distillation_loss(&student.forward(&x).unwrap(), &t_logits, &labels, params).unwrap().0
        });
        let err = relative_error(&grads.flatten(), &fd);
        assert!(err < FD_TOLERANCE, "trial {trial}: rel err {err}");
    }
}

#[test]
fn tiny_sgd_step_does_not_increase_loss() {
    for trial in 0..TRIALS {
        let mut r = rng(600 + trial);
        let mut net = DenseNet::new(&[4, 6, 3], Activation::Linear, &mut r).unwrap();
        let x = normal_matrix(8, 4, 1.0, &mut r);
        let labels = random_labels(8, 3, &mut r);
        let (logits, cache) = net.forward_cached(&x).unwrap();
        let (before, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (grads, _) = net.backward(&cache, &dlogits);
        Optimizer::new(OptimizerKind::Sgd, 1e-6, &net).step(&mut net, &grads);
        let (after, _) = softmax_cross_entropy(&net.forward(&x).unwrap(), &labels).unwrap();
        assert!(after <= before, "trial {trial}: {before} -> {after}");

        let arch = VaeArch { input_dim: 4, encoder_hidden: vec![3], latent_dim: 2, decoder_hidden: vec![3], beta: 1.0 };
        let mut vae = VaeModel::new(&arch, &mut r).unwrap();
        let noise = normal_matrix(8, 2, 1.0, &mut r);
        let (v0, g) = vae.loss_and_grad(&x, &noise).unwrap();
        Optimizer::new(OptimizerKind::Sgd, 1e-6, &vae).step(&mut vae, &g);
        let v1 = vae.loss(&x, &noise).unwrap();
        assert!(v1.loss <= v0.loss, "trial {trial}: vae {} -> {}", v0.loss, v1.loss);
    }
}

proptest! {
    #[test]
    fn kl_term_is_non_negative(
        mu in prop::collection::vec(-50.0f64..50.0, 1..12),
        lv_seed in prop::collection::vec(-20.0f64..20.0, 12),
    ) {
        let k = mu.len();
        let lv: Vec<f64> = lv_seed[..k].to_vec();
        let x = Matrix::zeros(1, 2);
        let v = vae_loss(&x, &x, &Matrix::from_vec(1, k, mu).unwrap(), &Matrix::from_vec(1, k, lv).unwrap(), 1.0).unwrap();
        prop_assert!(v.kl >= -1e-9, "kl = {}", v.kl);
    }

    #[test]
    fn distillation_loss_is_non_negative(
        s in prop::collection::vec(-30.0f64..30.0, 6),
        t in prop::collection::vec(-30.0f64..30.0, 6),
        temperature in 0.1f64..10.0,
        alpha in 0.0f64..=1.0,
        label in 0usize..3,
    ) {
        let s = Matrix::from_vec(2, 3, s).unwrap();
        let t = Matrix::from_vec(2, 3, t).unwrap();
        let (loss, _) = distillation_loss(&s, &t, &[label, 2 - label], DistillParams { temperature, alpha }).unwrap();
        prop_assert!(loss >= -1e-12, "loss = {loss}");
    }
}
