//! Minimal reverse-mode differentiable computation over dense f64 arrays,
//! the two optimizers used for training, and checkpoint persistence.

pub mod checkpoint;
pub(crate) mod linalg;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use optim::OptimizerState;
pub use params::ParameterSet;
pub use tape::{
    bce_from_logit_scalar, mean_abs_err_scalar, sigmoid, Activation, Gradients, Tape, ValueId,
};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::Result;

/// Xavier/Glorot-uniform weight matrix `[out, in]`.
pub fn xavier_uniform(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let data: Vec<f64> = (0..out_dim * in_dim).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(out_dim, in_dim, data)
}
