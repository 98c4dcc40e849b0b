//! Speaker-verification protocol.
//!
//! A multinomial logistic speaker classifier is trained on raw embeddings
//! of a training split. Each held-out (possibly manipulated) embedding
//! produces one target trial, scored by the posterior of its true speaker,
//! and a fixed number of nontarget trials scored by the posteriors of
//! sampled impostor speakers. The pooled trials yield the EER.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::roc::{eer_from_roc, roc_curve, Trial};
use crate::nn::{linalg, Tensor};
use crate::par;

#[derive(Clone, Debug)]
pub struct SpeakerClassifier {
    /// `[n_speakers, dim]`
    weights: Tensor,
    bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { iterations: 300, learning_rate: 0.5, momentum: 0.9 }
    }
}

fn softmax_rows(logits: &mut [f64], cols: usize) {
    par::for_each_row(logits, cols, |_, row| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
}

/// Full-batch gradient descent with momentum on the softmax cross-entropy.
pub fn train_speaker_classifier(
    embeddings: &Tensor,
    speaker_ids: &[usize],
    n_speakers: usize,
    config: &ClassifierConfig,
) -> Result<SpeakerClassifier> {
    let (n, d) = embeddings.shape();
    if n == 0 || n != speaker_ids.len() {
        return Err(Error::Data(format!(
            "classifier needs matching inputs, got {} rows and {} ids",
            n,
            speaker_ids.len()
        )));
    }
    if speaker_ids.iter().any(|&s| s >= n_speakers) {
        return Err(Error::Data("speaker id outside the classifier range".into()));
    }

    let mut weights = vec![0.0; n_speakers * d];
    let mut bias = vec![0.0; n_speakers];
    let mut vel_w = vec![0.0; n_speakers * d];
    let mut vel_b = vec![0.0; n_speakers];
    let inv_n = 1.0 / n as f64;

    let mut probs = vec![0.0; n * n_speakers];
    let mut grad_w = vec![0.0; n_speakers * d];
    for _ in 0..config.iterations {
        linalg::matmul_nt(embeddings.as_slice(), &weights, n, d, n_speakers, &mut probs);
        par::for_each_row(&mut probs, n_speakers, |_, row| {
            for (v, b) in row.iter_mut().zip(&bias) {
                *v += b;
            }
        });
        softmax_rows(&mut probs, n_speakers);
        // residual = probs - one_hot(ids)
        for (r, &id) in speaker_ids.iter().enumerate() {
            probs[r * n_speakers + id] -= 1.0;
        }
        linalg::matmul_tn(&probs, embeddings.as_slice(), n, n_speakers, d, &mut grad_w);
        let grad_b = linalg::column_sums(&probs, n, n_speakers);

        for ((w, v), g) in weights.iter_mut().zip(&mut vel_w).zip(&grad_w) {
            *v = config.momentum * *v + g * inv_n;
            *w -= config.learning_rate * *v;
        }
        for ((b, v), g) in bias.iter_mut().zip(&mut vel_b).zip(&grad_b) {
            *v = config.momentum * *v + g * inv_n;
            *b -= config.learning_rate * *v;
        }
    }

    Ok(SpeakerClassifier { weights: Tensor::new(n_speakers, d, weights)?, bias })
}

impl SpeakerClassifier {
    pub fn n_speakers(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Softmax posteriors over speakers for one embedding.
    pub fn posteriors(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "embedding width {} does not match classifier dimension {}",
                embedding.len(),
                self.dim()
            )));
        }
        let s = self.n_speakers();
        let mut logits = vec![0.0; s];
        linalg::matmul_nt(embedding, self.weights.as_slice(), 1, self.dim(), s, &mut logits);
        for (l, b) in logits.iter_mut().zip(&self.bias) {
            *l += b;
        }
        softmax_rows(&mut logits, s);
        Ok(logits)
    }

    /// Held-out accuracy of the argmax decision.
    pub fn accuracy(&self, embeddings: &Tensor, speaker_ids: &[usize]) -> Result<f64> {
        let correct: usize = par::map_range(embeddings.rows(), |r| {
            let p = self.posteriors(embeddings.row(r)).expect("widths checked by caller");
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            usize::from(argmax == speaker_ids[r])
        })
        .into_iter()
        .sum();
        Ok(correct as f64 / embeddings.rows() as f64)
    }
}

/// Score held-out embeddings (after applying `manipulate`) against the
/// classifier and pool target/nontarget trials into an EER and its ROC.
///
/// Requires at least two speakers and two utterances per evaluated speaker
/// upstream; impostors are sampled uniformly among the other speakers.
pub fn speaker_verification_eer<F>(
    embeddings: &Tensor,
    speaker_ids: &[usize],
    classifier: &SpeakerClassifier,
    manipulate: F,
    impostors_per_trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<(f64, f64)>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = embeddings.rows();
    if n != speaker_ids.len() || n == 0 {
        return Err(Error::Data(format!(
            "verification needs matching inputs, got {} rows and {} ids",
            n,
            speaker_ids.len()
        )));
    }
    let n_speakers = classifier.n_speakers();
    if n_speakers < 2 {
        return Err(Error::Data("verification needs at least 2 speakers".into()));
    }
    if impostors_per_trial == 0 || impostors_per_trial > n_speakers - 1 {
        return Err(Error::Config(format!(
            "impostors_per_trial must lie in 1..={}, got {impostors_per_trial}",
            n_speakers - 1
        )));
    }

    let posteriors: Vec<Vec<f64>> = par::map_range(n, |r| {
        manipulate(embeddings.row(r)).and_then(|h| classifier.posteriors(&h))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut trials = Vec::with_capacity(n * (impostors_per_trial + 1));
    for (r, p) in posteriors.iter().enumerate() {
        let true_id = speaker_ids[r];
        trials.push(Trial { score: p[true_id], is_target: true });
        let mut chosen = std::collections::BTreeSet::new();
        while chosen.len() < impostors_per_trial {
            let candidate = rng.random_range(0..n_speakers);
            if candidate != true_id {
                chosen.insert(candidate);
            }
        }
        for impostor in chosen {
            trials.push(Trial { score: p[impostor], is_target: false });
        }
    }

    let points = roc_curve(&trials)?;
    Ok((eer_from_roc(&points)?, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::SeedTree;
    use crate::speaker::{generate_corpus, split_corpus, SyntheticCorpusConfig};

    fn test_corpus() -> crate::speaker::Corpus {
        generate_corpus(&SyntheticCorpusConfig {
            n_speakers: 12,
            utterances_per_speaker: 12,
            embedding_dim: 24,
            gender_balance: 0.5,
            noise_sigma: 0.2,
            gender_strength: 1.0,
            seed: 404,
        })
        .unwrap()
    }

    #[test]
    fn classifier_separates_synthetic_speakers() {
        let corpus = test_corpus();
        let split = split_corpus(&corpus, 0.25, SeedTree::new(1)).unwrap();
        let clf = train_speaker_classifier(
            &corpus.stack(&split.train),
            &corpus.speaker_ids(&split.train),
            corpus.n_speakers(),
            &ClassifierConfig::default(),
        )
        .unwrap();
        let acc = clf
            .accuracy(&corpus.stack(&split.eval), &corpus.speaker_ids(&split.eval))
            .unwrap();
        assert!(acc > 0.9, "held-out speaker accuracy {acc}");
    }

    #[test]
    fn identity_manipulation_gives_low_eer() {
        let corpus = test_corpus();
        let split = split_corpus(&corpus, 0.25, SeedTree::new(2)).unwrap();
        let clf = train_speaker_classifier(
            &corpus.stack(&split.train),
            &corpus.speaker_ids(&split.train),
            corpus.n_speakers(),
            &ClassifierConfig::default(),
        )
        .unwrap();
        let mut rng = SeedTree::new(3).rng();
        let (eer, points) = speaker_verification_eer(
            &corpus.stack(&split.eval),
            &corpus.speaker_ids(&split.eval),
            &clf,
            |h| Ok(h.to_vec()),
            5,
            &mut rng,
        )
        .unwrap();
        assert!(eer < 0.10, "identity EER {eer}");
        assert!(points.len() >= 2);
    }

    #[test]
    fn noise_embeddings_give_chance_eer() {
        let corpus = test_corpus();
        let split = split_corpus(&corpus, 0.25, SeedTree::new(4)).unwrap();
        let clf = train_speaker_classifier(
            &corpus.stack(&split.train),
            &corpus.speaker_ids(&split.train),
            corpus.n_speakers(),
            &ClassifierConfig::default(),
        )
        .unwrap();
        // Replace every embedding by fresh noise: scores become exchangeable.
        let mut noise_rng = SeedTree::new(5).rng();
        let eval = corpus.stack(&split.eval);
        let noise_rows: Vec<Vec<f64>> = (0..eval.rows())
            .map(|_| (0..eval.cols()).map(|_| noise_rng.random_range(-0.5..0.5)).collect())
            .collect();
        let noise = Tensor::from_rows(&noise_rows).unwrap();
        let mut rng = SeedTree::new(6).rng();
        let (eer, _) = speaker_verification_eer(
            &noise,
            &corpus.speaker_ids(&split.eval),
            &clf,
            |h| Ok(h.to_vec()),
            5,
            &mut rng,
        )
        .unwrap();
        assert!((eer - 0.5).abs() < 0.05, "noise EER {eer}");
    }

    #[test]
    fn impostor_count_validated() {
        let corpus = test_corpus();
        let split = split_corpus(&corpus, 0.25, SeedTree::new(7)).unwrap();
        let clf = train_speaker_classifier(
            &corpus.stack(&split.train),
            &corpus.speaker_ids(&split.train),
            corpus.n_speakers(),
            &ClassifierConfig { iterations: 5, ..ClassifierConfig::default() },
        )
        .unwrap();
        let mut rng = SeedTree::new(8).rng();
        let res = speaker_verification_eer(
            &corpus.stack(&split.eval),
            &corpus.speaker_ids(&split.eval),
            &clf,
            |h| Ok(h.to_vec()),
            999,
            &mut rng,
        );
        assert!(res.is_err());
    }
}
