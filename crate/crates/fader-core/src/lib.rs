//! Adversarial disentanglement of a binary voice attribute (gender) from
//! fixed-length speaker embeddings.
//!
//! The crate provides:
//!
//! - [`nn`]: a small reverse-mode differentiation tape over dense f64
//!   matrices, SGD-with-momentum and Adam, and a bit-exact checkpoint format;
//! - [`align`]: phoneme/frame compression and decompression plus the
//!   frame-level and alphabet-level contrastive losses computed on aligned
//!   embedding sequences;
//! - [`speaker`]: a synthetic speaker-embedding corpus with known
//!   identity/gender structure, input standardization, and corpus file I/O;
//! - [`fader`]: the attribute fader itself — a pre-trained gender
//!   discriminator, the conditioned autoencoder, the adversarial latent
//!   classifier, the training loop, and attribute manipulation;
//! - [`metrics`]: accuracy, ROC/EER, a k-nearest-neighbor mutual-information
//!   estimator for discrete/continuous pairs, PCA, and a speaker-verification
//!   protocol;
//! - [`config`], [`pipeline`], [`eval`]: deterministic end-to-end runs and
//!   report emission for the CLI.
//!
//! Data-parallel inner loops dispatch through [`par`]; disabling the default
//! `parallel` feature swaps in sequential fallbacks with bit-identical
//! results.

pub mod align;
pub mod config;
pub mod error;
pub mod eval;
pub mod fader;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod speaker;

pub use error::{Error, Result};
