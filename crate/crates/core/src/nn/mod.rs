//! Dense networks, losses, the VAE and first-order optimizers.

pub mod dense;
pub mod loss;
pub mod optim;
pub mod vae;

pub use dense::{count_parameters, Activation, DenseNet, ForwardCache, GradientSet, Layer, LayerGrad, Parameterized};
pub use loss::{softmax_cross_entropy, vae_loss, vae_loss_with_grad, VaeLossGrad, VaeLossValue};
pub use optim::{shuffled_batches, Optimizer, OptimizerKind, TrainConfig};
pub use vae::{encode_dataset, reparameterize, standard_normal, train_vae, VaeArch, VaeEpoch, VaeForward, VaeModel};
