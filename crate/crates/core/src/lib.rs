//! Tabular intrusion-detection pipeline: preprocessing, VAE latent codes,
//! teacher/student distillation, break-down attribution and evaluation.

pub mod attribution;
pub mod config;
pub mod datapipe;
pub mod distill;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
