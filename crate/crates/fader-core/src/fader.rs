//! The attribute fader.
//!
//! A pre-trained gender discriminator scores raw speaker embeddings with a
//! smooth posterior. The fader itself is an autoencoder whose decoder is
//! conditioned on an attribute value in [0, 1], trained jointly with an
//! adversarial latent classifier: per batch the classifier is updated to
//! predict the attribute from the latent code, then the autoencoder is
//! updated to reconstruct its input while fooling the classifier. With the
//! adversarial term active the latent code sheds the attribute and the
//! decoder must rely on the conditioning value, which is what makes
//! attribute manipulation work at conversion time.
//!
//! The autoencoder operates in the raw tanh-range embedding space; the
//! discriminator standardizes its input internally with the standardizer
//! fitted at pre-training time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, linalg, sigmoid, Checkpoint, OptimizerState, ParameterSet, Tape, Tensor, ValueId,
};
use crate::par;
use crate::rng::SeedTree;
use crate::speaker::{fit_standardizer, Corpus, Split, Standardizer};

// ---- models ----------------------------------------------------------------

/// Gender discriminator pre-trained on raw speaker embeddings:
/// an MLP `dim -> hidden (tanh) -> 1 logit` over standardized inputs.
#[derive(Clone, Debug)]
pub struct PretrainedDiscriminator {
    pub params: ParameterSet,
    pub standardizer: Standardizer,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

/// The conditioned autoencoder: a linear encoder `dim -> latent` and a
/// tanh decoder `latent + 1 -> dim` consuming the latent code concatenated
/// with the conditioning scalar.
#[derive(Clone, Debug)]
pub struct AttributeAutoencoder {
    pub params: ParameterSet,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub trained: bool,
}

/// Adversarial latent classifier: affine `latent -> 1 logit`.
#[derive(Clone, Debug)]
pub struct AttributeDiscriminator {
    pub params: ParameterSet,
    pub latent_dim: usize,
}

/// Attribute-independent identity code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
}

/// How the conditioning value is resolved at manipulation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditioning {
    /// w = smooth posterior of the pre-trained discriminator.
    Estimated,
    /// w = 1 - smooth posterior.
    Inverted,
    /// w = 1/2.
    Neutral,
    /// A caller-chosen w in [0, 1].
    Explicit(f64),
}

impl Conditioning {
    pub fn resolve(&self, estimated_posterior: f64) -> Result<f64> {
        let w = match self {
            Conditioning::Estimated => estimated_posterior,
            Conditioning::Inverted => 1.0 - estimated_posterior,
            Conditioning::Neutral => 0.5,
            Conditioning::Explicit(w) => *w,
        };
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Domain(format!("conditioning value {w} outside [0, 1]")));
        }
        Ok(w)
    }
}

/// The three training losses, batch-averaged.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FaderLossReport {
    pub reconstruction: f64,
    pub discriminator: f64,
    pub adversarial: f64,
}

const ENCODER_INIT_GAIN: f64 = 3.0;

impl AttributeAutoencoder {
    pub fn init(embedding_dim: usize, latent_dim: usize, seed: SeedTree) -> Result<Self> {
        if latent_dim == 0 || latent_dim >= embedding_dim {
            return Err(Error::Config(format!(
                "latent_dim must lie in 1..{embedding_dim}, got {latent_dim}"
            )));
        }
        let mut params = ParameterSet::new();
        let mut enc_rng = seed.derive("encoder").rng();
        // The encoder starts larger than Xavier so the latent pathway, not
        // the single conditioning input, absorbs the attribute axis when
        // both could explain it (the redundant-feature split goes to the
        // higher-variance representation).
        let mut enc_w = nn::xavier_uniform(latent_dim, embedding_dim, &mut enc_rng)?;
        for v in enc_w.data_mut() {
            *v *= ENCODER_INIT_GAIN;
        }
        params.insert("enc.w", enc_w)?;
        params.insert("enc.b", Tensor::zeros(1, latent_dim))?;
        let mut dec_rng = seed.derive("decoder").rng();
        // The conditioning column starts at zero: the decoder only comes to
        // rely on the attribute value once the latent pathway stops
        // providing it.
        let mut dec_w = nn::xavier_uniform(embedding_dim, latent_dim + 1, &mut dec_rng)?;
        {
            let data = dec_w.data_mut();
            for r in 0..embedding_dim {
                data[r * (latent_dim + 1) + latent_dim] = 0.0;
            }
        }
        params.insert("dec.w", dec_w)?;
        params.insert("dec.b", Tensor::zeros(1, embedding_dim))?;
        Ok(AttributeAutoencoder { params, embedding_dim, latent_dim, trained: false })
    }

    /// Latent code for one embedding.
    pub fn encode(&self, embedding: &[f64]) -> Result<LatentCode> {
        let batch = Tensor::from_rows(&[embedding.to_vec()])?;
        let z = self.encode_batch(&batch)?;
        Ok(LatentCode { values: z.row(0).to_vec() })
    }

    /// Reconstruction from a latent code and a conditioning value in [0, 1].
    pub fn decode(&self, code: &LatentCode, w: f64) -> Result<Vec<f64>> {
        let z = Tensor::from_rows(&[code.values.clone()])?;
        let out = self.decode_batch(&z, &[w])?;
        Ok(out.row(0).to_vec())
    }

    pub fn encode_batch(&self, embeddings: &Tensor) -> Result<Tensor> {
        if embeddings.cols() != self.embedding_dim {
            return Err(Error::Dimension(format!(
                "embedding width {} does not match autoencoder dimension {}",
                embeddings.cols(),
                self.embedding_dim
            )));
        }
        let w = self.params.require("enc.w")?;
        let b = self.params.require("enc.b")?;
        let n = embeddings.rows();
        let mut out = vec![0.0; n * self.latent_dim];
        linalg::matmul_nt(
            embeddings.as_slice(),
            w.as_slice(),
            n,
            self.embedding_dim,
            self.latent_dim,
            &mut out,
        );
        let bias = b.as_slice();
        par::for_each_row(&mut out, self.latent_dim, |_, row| {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        });
        Tensor::new(n, self.latent_dim, out)
    }

    pub fn decode_batch(&self, codes: &Tensor, conditioning: &[f64]) -> Result<Tensor> {
        if codes.cols() != self.latent_dim || codes.rows() != conditioning.len() {
            return Err(Error::Dimension(format!(
                "latent batch {:?} does not match {} conditioning values of dim {}",
                codes.shape(),
                conditioning.len(),
                self.latent_dim
            )));
        }
        for &w in conditioning {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Domain(format!("conditioning value {w} outside [0, 1]")));
            }
        }
        let w = self.params.require("dec.w")?;
        let b = self.params.require("dec.b")?;
        let n = codes.rows();
        let mut joined = Vec::with_capacity(n * (self.latent_dim + 1));
        for r in 0..n {
            joined.extend_from_slice(codes.row(r));
            joined.push(conditioning[r]);
        }
        let mut out = vec![0.0; n * self.embedding_dim];
        linalg::matmul_nt(
            &joined,
            w.as_slice(),
            n,
            self.latent_dim + 1,
            self.embedding_dim,
            &mut out,
        );
        let bias = b.as_slice();
        par::for_each_row(&mut out, self.embedding_dim, |_, row| {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o = (*o + bv).tanh();
            }
        });
        Tensor::new(n, self.embedding_dim, out)
    }
}

impl AttributeDiscriminator {
    pub fn init(latent_dim: usize) -> Result<Self> {
        let mut params = ParameterSet::new();
        // Zero init: the classifier starts exactly uninformative (ln 2 loss)
        // and contributes no encoder gradient until it has learned.
        params.insert("c.w", Tensor::zeros(1, latent_dim))?;
        params.insert("c.b", Tensor::zeros(1, 1))?;
        Ok(AttributeDiscriminator { params, latent_dim })
    }

    pub fn logits(&self, codes: &Tensor) -> Result<Vec<f64>> {
        if codes.cols() != self.latent_dim {
            return Err(Error::Dimension(format!(
                "latent width {} does not match classifier dimension {}",
                codes.cols(),
                self.latent_dim
            )));
        }
        let w = self.params.require("c.w")?;
        let b = self.params.require("c.b")?.get(0, 0);
        let n = codes.rows();
        let mut out = vec![0.0; n];
        linalg::matmul_nt(codes.as_slice(), w.as_slice(), n, self.latent_dim, 1, &mut out);
        for o in &mut out {
            *o += b;
        }
        Ok(out)
    }
}

impl PretrainedDiscriminator {
    pub fn init(
        embedding_dim: usize,
        hidden_dim: usize,
        standardizer: Standardizer,
        seed: SeedTree,
    ) -> Result<Self> {
        let mut params = ParameterSet::new();
        let mut rng = seed.derive("hidden").rng();
        params.insert("w1", nn::xavier_uniform(hidden_dim, embedding_dim, &mut rng)?)?;
        params.insert("b1", Tensor::zeros(1, hidden_dim))?;
        // Zero-init output layer: the untrained logit is exactly 0, so an
        // epochs=0 model predicts the positive class everywhere.
        params.insert("w2", Tensor::zeros(1, hidden_dim))?;
        params.insert("b2", Tensor::zeros(1, 1))?;
        Ok(PretrainedDiscriminator { params, standardizer, embedding_dim, hidden_dim })
    }

    /// Logits for a batch of raw (unstandardized) embeddings.
    pub fn logits(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        let x = self.standardizer.apply(embeddings)?;
        let w1 = self.params.require("w1")?;
        let b1 = self.params.require("b1")?;
        let w2 = self.params.require("w2")?;
        let b2 = self.params.require("b2")?.get(0, 0);
        let n = x.rows();
        let mut hidden = vec![0.0; n * self.hidden_dim];
        linalg::matmul_nt(
            x.as_slice(),
            w1.as_slice(),
            n,
            self.embedding_dim,
            self.hidden_dim,
            &mut hidden,
        );
        let bias = b1.as_slice();
        par::for_each_row(&mut hidden, self.hidden_dim, |_, row| {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o = (*o + bv).tanh();
            }
        });
        let mut out = vec![0.0; n];
        linalg::matmul_nt(&hidden, w2.as_slice(), n, self.hidden_dim, 1, &mut out);
        for o in &mut out {
            *o += b2;
        }
        Ok(out)
    }

    /// Smooth posterior probabilities for raw embeddings.
    pub fn smooth_posteriors(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(embeddings)?.into_iter().map(sigmoid).collect())
    }
}

/// Smooth posterior of the pre-trained discriminator for one embedding.
pub fn smooth_posterior(disc: &PretrainedDiscriminator, embedding: &[f64]) -> Result<f64> {
    let batch = Tensor::from_rows(&[embedding.to_vec()])?;
    Ok(disc.smooth_posteriors(&batch)?[0])
}

// ---- pre-training ----------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden_dim: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 2e-3,
            momentum: 0.9,
            hidden_dim: 64,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "pretrain.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("pretrain.hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

fn shuffled(n: usize, seed: SeedTree) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    order
}

/// Train the gender discriminator on the training split and report held-out
/// accuracy over the eval split.
pub fn pretrain_discriminator(
    corpus: &Corpus,
    split: &Split,
    config: &PretrainConfig,
    seed: SeedTree,
) -> Result<(PretrainedDiscriminator, f64)> {
    config.validate()?;
    if !corpus.has_both_genders() {
        return Err(Error::Data("discriminator pre-training needs both genders".into()));
    }

    let standardizer = fit_standardizer(&corpus.stack(&split.train))?;
    let mut disc = PretrainedDiscriminator::init(
        corpus.embedding_dim,
        config.hidden_dim,
        standardizer,
        seed.derive("init"),
    )?;
    let mut opt =
        OptimizerState::sgd_momentum(config.learning_rate, config.momentum, &disc.params)?;

    let x_all = disc.standardizer.apply(&corpus.stack(&split.train))?;
    let y_all = corpus.genders(&split.train);

    for epoch in 0..config.epochs {
        let order = shuffled(split.train.len(), seed.derive("batch").index(epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| x_all.row(i).to_vec()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| y_all[i]).collect();
            let x = Tensor::from_rows(&rows)?;

            let mut tape = Tape::new();
            let binding = tape.bind(&disc.params);
            let (w1, b1) = (Tape::bound(&binding, "w1"), Tape::bound(&binding, "b1"));
            let (w2, b2) = (Tape::bound(&binding, "w2"), Tape::bound(&binding, "b2"));
            let xid = tape.leaf(x);
            let h = tape.affine(w1, b1, xid)?;
            let h = tape.tanh(h);
            let logits = tape.affine(w2, b2, h)?;
            let loss = tape.bce_from_logit(logits, &targets)?;
            let loss_value = tape.value(loss).scalar_value()?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "pre-training loss became {loss_value} at epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss)?;
            let grad_set = grads.to_parameter_set(&tape, &binding);
            opt.step(&mut disc.params, &grad_set)?;
        }
    }

    let eval_x = corpus.stack(&split.eval);
    let eval_y = corpus.genders(&split.eval);
    let posts = disc.smooth_posteriors(&eval_x)?;
    let accuracy = crate::metrics::binary_accuracy(&posts, &eval_y, 0.5)?;
    Ok((disc, accuracy))
}

// ---- fader training ---------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Classifier step, then autoencoder step (two updates per batch).
    Alternating,
    /// Both gradients from the same forward pass, applied together.
    Simultaneous,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub latent_dim: usize,
    pub use_adversarial: bool,
    /// Substitute the binary attribute with the pre-trained discriminator's
    /// smooth posterior as the training target and conditioning value.
    pub use_smooth_labels: bool,
    /// Fraction of total steps over which the adversarial weight ramps
    /// linearly from 0 to its plateau.
    pub adv_weight_ramp: f64,
    /// Plateau of the adversarial weight after the ramp.
    pub adv_weight_max: f64,
    pub update_mode: UpdateMode,
}

impl Default for FaderTrainConfig {
    fn default() -> Self {
        FaderTrainConfig {
            epochs: 400,
            batch_size: 64,
            learning_rate: 2e-3,
            momentum: 0.9,
            latent_dim: 60,
            use_adversarial: true,
            use_smooth_labels: false,
            adv_weight_ramp: 0.1,
            adv_weight_max: 1.0,
            update_mode: UpdateMode::Alternating,
        }
    }
}

impl FaderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("fader.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "fader.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.adv_weight_ramp) {
            return Err(Error::Config(format!(
                "fader.adv_weight_ramp must lie in [0, 1], got {}",
                self.adv_weight_ramp
            )));
        }
        if !(self.adv_weight_max >= 0.0) {
            return Err(Error::Config(format!(
                "fader.adv_weight_max must be >= 0, got {}",
                self.adv_weight_max
            )));
        }
        Ok(())
    }

    /// Adversarial weight at a global step: 0 at step 0, ramping linearly to
    /// the plateau over the first `adv_weight_ramp` fraction of steps, then
    /// constant. Identically 0 when the adversarial loss is disabled.
    pub fn adversarial_weight(&self, step: usize, total_steps: usize) -> f64 {
        if !self.use_adversarial {
            return 0.0;
        }
        let ramp_steps = (total_steps as f64 * self.adv_weight_ramp).floor();
        if ramp_steps < 1.0 {
            return self.adv_weight_max;
        }
        self.adv_weight_max * (step as f64 / ramp_steps).min(1.0)
    }
}

/// Per-epoch averages of the three losses (adversarial reported unweighted).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub reconstruction: f64,
    pub discriminator: f64,
    pub adversarial: f64,
}

#[derive(Clone, Debug)]
pub struct FaderTrainResult {
    pub autoencoder: AttributeAutoencoder,
    pub discriminator: AttributeDiscriminator,
    pub history: Vec<EpochLosses>,
    pub opt_autoencoder: OptimizerState,
    pub opt_discriminator: OptimizerState,
    pub epochs_done: usize,
}

struct ForwardIds {
    z: ValueId,
    logits: ValueId,
}

fn fader_forward(
    tape: &mut Tape,
    ae_binding: &[(String, ValueId)],
    c_binding: &[(String, ValueId)],
    x: ValueId,
) -> Result<ForwardIds> {
    let (ew, eb) = (Tape::bound(ae_binding, "enc.w"), Tape::bound(ae_binding, "enc.b"));
    let (cw, cb) = (Tape::bound(c_binding, "c.w"), Tape::bound(c_binding, "c.b"));
    let z = tape.affine(ew, eb, x)?;
    let logits = tape.affine(cw, cb, z)?;
    Ok(ForwardIds { z, logits })
}

fn decode_on_tape(
    tape: &mut Tape,
    ae_binding: &[(String, ValueId)],
    z: ValueId,
    conditioning: ValueId,
) -> Result<ValueId> {
    let (dw, db) = (Tape::bound(ae_binding, "dec.w"), Tape::bound(ae_binding, "dec.b"));
    let joined = tape.concat_cols(z, conditioning)?;
    let pre = tape.affine(dw, db, joined)?;
    Ok(tape.tanh(pre))
}

/// Batch losses without any update, matching the training objective.
pub fn fader_losses(
    ae: &AttributeAutoencoder,
    c: &AttributeDiscriminator,
    batch: &Tensor,
    targets: &[f64],
) -> Result<FaderLossReport> {
    if batch.rows() == 0 || batch.rows() != targets.len() {
        return Err(Error::Data(format!(
            "loss evaluation needs one target per batch row, got {} rows and {} targets",
            batch.rows(),
            targets.len()
        )));
    }
    let z = ae.encode_batch(batch)?;
    let reconstructed = ae.decode_batch(&z, targets)?;
    let reconstruction = nn::mean_abs_err_scalar(batch.as_slice(), reconstructed.as_slice())?;
    let logits = c.logits(&z)?;
    let mut disc_loss = 0.0;
    let mut adv_loss = 0.0;
    for (l, t) in logits.iter().zip(targets) {
        disc_loss += nn::bce_from_logit_scalar(*l, *t)?;
        adv_loss += nn::bce_from_logit_scalar(*l, 1.0 - t)?;
    }
    Ok(FaderLossReport {
        reconstruction,
        discriminator: disc_loss / targets.len() as f64,
        adversarial: adv_loss / targets.len() as f64,
    })
}

/// Train the fader on the given corpus rows. `resume` continues a previous
/// run bit-exactly provided the config, corpus, and seed are unchanged.
pub fn train_fader(
    corpus: &Corpus,
    train_indices: &[usize],
    config: &FaderTrainConfig,
    pretrained: Option<&PretrainedDiscriminator>,
    seed: SeedTree,
    resume: Option<&FaderTrainResult>,
) -> Result<FaderTrainResult> {
    train_fader_until(corpus, train_indices, config, pretrained, seed, resume, None)
}

/// [`train_fader`] with an optional early stop after `stop_after` epochs of
/// this call. The adversarial-weight schedule stays anchored to the config's
/// full horizon, so stopping and resuming reproduces an uninterrupted run.
pub fn train_fader_until(
    corpus: &Corpus,
    train_indices: &[usize],
    config: &FaderTrainConfig,
    pretrained: Option<&PretrainedDiscriminator>,
    seed: SeedTree,
    resume: Option<&FaderTrainResult>,
    stop_after: Option<usize>,
) -> Result<FaderTrainResult> {
    config.validate()?;
    if train_indices.is_empty() {
        return Err(Error::Data("fader training needs a non-empty training split".into()));
    }
    if config.use_smooth_labels && pretrained.is_none() {
        return Err(Error::Config("use_smooth_labels requires a pre-trained discriminator".into()));
    }

    let x_all = corpus.stack(train_indices);
    let targets_all: Vec<f64> = if config.use_smooth_labels {
        pretrained.expect("checked above").smooth_posteriors(&x_all)?
    } else {
        corpus.genders(train_indices)
    };

    let (mut ae, mut c, mut opt_ae, mut opt_c, mut history, start_epoch) = match resume {
        Some(prev) => (
            prev.autoencoder.clone(),
            prev.discriminator.clone(),
            prev.opt_autoencoder.clone(),
            prev.opt_discriminator.clone(),
            prev.history.clone(),
            prev.epochs_done,
        ),
        None => {
            let ae = AttributeAutoencoder::init(
                corpus.embedding_dim,
                config.latent_dim,
                seed.derive("init"),
            )?;
            let c = AttributeDiscriminator::init(config.latent_dim)?;
            let opt_ae =
                OptimizerState::sgd_momentum(config.learning_rate, config.momentum, &ae.params)?;
            let opt_c =
                OptimizerState::sgd_momentum(config.learning_rate, config.momentum, &c.params)?;
            (ae, c, opt_ae, opt_c, Vec::new(), 0)
        }
    };

    let n = train_indices.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let end_epoch = match stop_after {
        Some(k) => (start_epoch + k).min(config.epochs),
        None => config.epochs,
    };

    for epoch in start_epoch..end_epoch {
        let order = shuffled(n, seed.derive("batch").index(epoch as u64));
        let mut sums = (0.0, 0.0, 0.0);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let step = epoch * batches_per_epoch + batch_idx;
            let lambda = config.adversarial_weight(step, total_steps);

            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| x_all.row(i).to_vec()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| targets_all[i]).collect();
            let flipped: Vec<f64> = targets.iter().map(|t| 1.0 - t).collect();
            let conditioning = Tensor::new(chunk.len(), 1, targets.clone())?;
            let x = Tensor::from_rows(&rows)?;

            let report = match config.update_mode {
                UpdateMode::Alternating => {
                    // (i) classifier step: minimize the discriminator loss
                    // with respect to the classifier weights only. The
                    // encoder is frozen here, so its codes enter as a leaf.
                    let disc_loss_value;
                    {
                        let codes = ae.encode_batch(&x)?;
                        let mut tape = Tape::new();
                        let c_binding = tape.bind(&c.params);
                        let (cw, cb) =
                            (Tape::bound(&c_binding, "c.w"), Tape::bound(&c_binding, "c.b"));
                        let zid = tape.leaf(codes);
                        let logits = tape.affine(cw, cb, zid)?;
                        let loss = tape.bce_from_logit(logits, &targets)?;
                        disc_loss_value = tape.value(loss).scalar_value()?;
                        let grads = tape.backward(loss)?;
                        let grad_c = grads.to_parameter_set(&tape, &c_binding);
                        opt_c.step(&mut c.params, &grad_c)?;
                    }

                    // (ii) autoencoder step: minimize reconstruction plus the
                    // weighted adversarial loss with respect to the encoder
                    // and decoder only, against the updated classifier.
                    let mut tape = Tape::new();
                    let ae_binding = tape.bind(&ae.params);
                    let c_binding = tape.bind(&c.params);
                    let xid = tape.leaf(x.clone());
                    let wid = tape.leaf(conditioning.clone());
                    let ids = fader_forward(&mut tape, &ae_binding, &c_binding, xid)?;
                    let reconstructed = decode_on_tape(&mut tape, &ae_binding, ids.z, wid)?;
                    let recon = tape.mean_abs_err(reconstructed, xid)?;
                    let adv = tape.bce_from_logit(ids.logits, &flipped)?;
                    let weighted = tape.scale(adv, lambda);
                    let total = tape.add(recon, weighted)?;
                    let grads = tape.backward(total)?;
                    let grad_ae = grads.to_parameter_set(&tape, &ae_binding);
                    opt_ae.step(&mut ae.params, &grad_ae)?;

                    FaderLossReport {
                        reconstruction: tape.value(recon).scalar_value()?,
                        discriminator: disc_loss_value,
                        adversarial: tape.value(adv).scalar_value()?,
                    }
                }
                UpdateMode::Simultaneous => {
                    // Both gradients from one forward pass against the same
                    // parameter values, applied together.
                    let mut tape = Tape::new();
                    let ae_binding = tape.bind(&ae.params);
                    let c_binding = tape.bind(&c.params);
                    let xid = tape.leaf(x.clone());
                    let wid = tape.leaf(conditioning.clone());
                    let ids = fader_forward(&mut tape, &ae_binding, &c_binding, xid)?;
                    let reconstructed = decode_on_tape(&mut tape, &ae_binding, ids.z, wid)?;
                    let recon = tape.mean_abs_err(reconstructed, xid)?;
                    let disc_loss = tape.bce_from_logit(ids.logits, &targets)?;
                    let adv = tape.bce_from_logit(ids.logits, &flipped)?;
                    let weighted = tape.scale(adv, lambda);
                    let total = tape.add(recon, weighted)?;

                    let grads_c = tape.backward(disc_loss)?;
                    let grad_c = grads_c.to_parameter_set(&tape, &c_binding);
                    let grads_ae = tape.backward(total)?;
                    let grad_ae = grads_ae.to_parameter_set(&tape, &ae_binding);
                    opt_c.step(&mut c.params, &grad_c)?;
                    opt_ae.step(&mut ae.params, &grad_ae)?;

                    FaderLossReport {
                        reconstruction: tape.value(recon).scalar_value()?,
                        discriminator: tape.value(disc_loss).scalar_value()?,
                        adversarial: tape.value(adv).scalar_value()?,
                    }
                }
            };

            if !report.reconstruction.is_finite()
                || !report.discriminator.is_finite()
                || !report.adversarial.is_finite()
            {
                return Err(Error::Numeric(format!(
                    "fader loss became non-finite at epoch {epoch} batch {batch_idx}"
                )));
            }
            let weight = chunk.len() as f64;
            sums.0 += report.reconstruction * weight;
            sums.1 += report.discriminator * weight;
            sums.2 += report.adversarial * weight;
        }
        history.push(EpochLosses {
            epoch,
            reconstruction: sums.0 / n as f64,
            discriminator: sums.1 / n as f64,
            adversarial: sums.2 / n as f64,
        });
    }

    ae.trained = true;
    Ok(FaderTrainResult {
        autoencoder: ae,
        discriminator: c,
        history,
        opt_autoencoder: opt_ae,
        opt_discriminator: opt_c,
        epochs_done: end_epoch,
    })
}

/// Reconstruct an embedding under the requested conditioning mode.
pub fn manipulate(
    ae: &AttributeAutoencoder,
    disc: &PretrainedDiscriminator,
    embedding: &[f64],
    conditioning: Conditioning,
) -> Result<Vec<f64>> {
    if !ae.trained {
        return Err(Error::Data("autoencoder has not been trained".into()));
    }
    let estimated = smooth_posterior(disc, embedding)?;
    let w = conditioning.resolve(estimated)?;
    ae.decode(&ae.encode(embedding)?, w)
}

/// Batch variant of [`manipulate`] used by the evaluation pipeline.
pub fn manipulate_batch(
    ae: &AttributeAutoencoder,
    disc: &PretrainedDiscriminator,
    embeddings: &Tensor,
    conditioning: Conditioning,
) -> Result<Tensor> {
    if !ae.trained {
        return Err(Error::Data("autoencoder has not been trained".into()));
    }
    let estimates = disc.smooth_posteriors(embeddings)?;
    let w: Vec<f64> =
        estimates.iter().map(|&e| conditioning.resolve(e)).collect::<Result<_>>()?;
    let z = ae.encode_batch(embeddings)?;
    ae.decode_batch(&z, &w)
}

// ---- checkpoint adapters ----------------------------------------------------

impl PretrainedDiscriminator {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint { params: self.params.clone(), ..Checkpoint::default() };
        ckpt.meta.insert("role".into(), "pretrained-discriminator".into());
        ckpt.meta.insert("embedding_dim".into(), self.embedding_dim.to_string());
        ckpt.meta.insert("hidden_dim".into(), self.hidden_dim.to_string());
        ckpt.meta.insert("standardizer".into(), serde_json::to_string(&self.standardizer)?);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let embedding_dim = meta_usize(ckpt, "embedding_dim")?;
        let hidden_dim = meta_usize(ckpt, "hidden_dim")?;
        let standardizer: Standardizer = serde_json::from_str(
            ckpt.meta
                .get("standardizer")
                .ok_or_else(|| Error::Data("checkpoint lacks a standardizer".into()))?,
        )?;
        Ok(PretrainedDiscriminator {
            params: ckpt.params.clone(),
            standardizer,
            embedding_dim,
            hidden_dim,
        })
    }
}

impl AttributeAutoencoder {
    pub fn to_checkpoint(&self, optimizer: Option<&OptimizerState>) -> Checkpoint {
        let mut ckpt = Checkpoint {
            params: self.params.clone(),
            optimizer: optimizer.cloned(),
            ..Checkpoint::default()
        };
        ckpt.meta.insert("role".into(), "attribute-autoencoder".into());
        ckpt.meta.insert("embedding_dim".into(), self.embedding_dim.to_string());
        ckpt.meta.insert("latent_dim".into(), self.latent_dim.to_string());
        ckpt.meta.insert("trained".into(), self.trained.to_string());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(AttributeAutoencoder {
            params: ckpt.params.clone(),
            embedding_dim: meta_usize(ckpt, "embedding_dim")?,
            latent_dim: meta_usize(ckpt, "latent_dim")?,
            trained: ckpt.meta.get("trained").map(String::as_str) == Some("true"),
        })
    }
}

impl AttributeDiscriminator {
    pub fn to_checkpoint(&self, optimizer: Option<&OptimizerState>) -> Checkpoint {
        let mut ckpt = Checkpoint {
            params: self.params.clone(),
            optimizer: optimizer.cloned(),
            ..Checkpoint::default()
        };
        ckpt.meta.insert("role".into(), "attribute-discriminator".into());
        ckpt.meta.insert("latent_dim".into(), self.latent_dim.to_string());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(AttributeDiscriminator {
            params: ckpt.params.clone(),
            latent_dim: meta_usize(ckpt, "latent_dim")?,
        })
    }
}

fn meta_usize(ckpt: &Checkpoint, key: &str) -> Result<usize> {
    ckpt.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Data(format!("checkpoint lacks metadata '{key}'")))
}
