//! Run configuration: one JSON document drives the whole pipeline.
//!
//! Unknown keys are rejected so typos fail loudly. A single 64-bit seed
//! fans out to named substreams (corpus, init, batching, trials); the
//! corpus section may pin its own seed, otherwise one is derived.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fader::{FaderTrainConfig, PretrainConfig};
use crate::rng::SeedTree;
use crate::speaker::SyntheticCorpusConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub embedding_dim: usize,
    pub gender_balance: f64,
    pub noise_sigma: f64,
    pub gender_strength: f64,
    /// Explicit corpus seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = SyntheticCorpusConfig::default();
        CorpusSection {
            n_speakers: d.n_speakers,
            utterances_per_speaker: d.utterances_per_speaker,
            embedding_dim: d.embedding_dim,
            gender_balance: d.gender_balance,
            noise_sigma: d.noise_sigma,
            gender_strength: d.gender_strength,
            seed: None,
        }
    }
}

impl CorpusSection {
    pub fn resolve(&self, run_seed: SeedTree) -> SyntheticCorpusConfig {
        SyntheticCorpusConfig {
            n_speakers: self.n_speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            embedding_dim: self.embedding_dim,
            gender_balance: self.gender_balance,
            noise_sigma: self.noise_sigma,
            gender_strength: self.gender_strength,
            seed: self.seed.unwrap_or_else(|| run_seed.derive("corpus").seed()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Neighbor count for the mutual-information estimator.
    pub knn_k: usize,
    /// PCA target dimension before pairwise MI search.
    pub pca_dims: usize,
    pub impostors_per_trial: usize,
    /// Held-out fraction per speaker.
    pub eval_fraction: f64,
    pub classifier_iterations: usize,
    pub classifier_learning_rate: f64,
    pub classifier_momentum: f64,
    /// Seeds aggregated by the report command; the run seed when empty.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            knn_k: 3,
            pca_dims: 8,
            impostors_per_trial: 10,
            eval_fraction: 0.1,
            classifier_iterations: 300,
            classifier_learning_rate: 0.5,
            classifier_momentum: 0.9,
            seeds: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("eval.knn_k must be >= 1".into()));
        }
        if self.pca_dims < 2 {
            return Err(Error::Config(format!(
                "eval.pca_dims must be >= 2, got {}",
                self.pca_dims
            )));
        }
        if self.impostors_per_trial == 0 {
            return Err(Error::Config("eval.impostors_per_trial must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) || self.eval_fraction == 0.0 {
            return Err(Error::Config(format!(
                "eval.eval_fraction must lie in (0, 1), got {}",
                self.eval_fraction
            )));
        }
        if self.classifier_iterations == 0 {
            return Err(Error::Config("eval.classifier_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn classifier_config(&self) -> crate::metrics::ClassifierConfig {
        crate::metrics::ClassifierConfig {
            iterations: self.classifier_iterations,
            learning_rate: self.classifier_learning_rate,
            momentum: self.classifier_momentum,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub fader: FaderTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn with_defaults(seed: u64, out_dir: PathBuf) -> Self {
        RunConfig {
            seed,
            out_dir,
            corpus: CorpusSection::default(),
            pretrain: PretrainConfig::default(),
            fader: FaderTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_corpus().validate()?;
        self.pretrain.validate()?;
        self.fader.validate()?;
        self.eval.validate()?;
        if self.fader.latent_dim == 0 || self.fader.latent_dim >= self.corpus.embedding_dim {
            return Err(Error::Config(format!(
                "fader.latent_dim must lie in 1..{}, got {}",
                self.corpus.embedding_dim, self.fader.latent_dim
            )));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        Ok(())
    }

    pub fn seed_tree(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    pub fn resolve_corpus(&self) -> SyntheticCorpusConfig {
        self.corpus.resolve(self.seed_tree())
    }

    /// Seeds the report aggregates over: the explicit list, or the run seed.
    pub fn report_seeds(&self) -> Vec<u64> {
        if self.eval.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.eval.seeds.clone()
        }
    }

    /// Canonical serialization used for embedding and hashing.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical serialization, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = self.canonical_json()?;
        let digest = Sha256::digest(bytes.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let config = RunConfig::with_defaults(42, PathBuf::from("out"));
        config.validate().unwrap();
        assert_eq!(config.fader.epochs, 400);
        assert_eq!(config.fader.latent_dim, 60);
        assert_eq!(config.corpus.n_speakers, 40);
        assert_eq!(config.eval.knn_k, 3);
    }

    #[test]
    fn unknown_keys_rejected_with_name() {
        let text = r#"{ "seed": 1, "out_dir": "x", "corpus": { "n_speekers": 10 } }"#;
        let err = serde_json::from_str::<RunConfig>(text).unwrap_err().to_string();
        assert!(err.contains("n_speekers"), "{err}");
    }

    #[test]
    fn invalid_field_named_in_error() {
        let mut config = RunConfig::with_defaults(1, PathBuf::from("x"));
        config.corpus.n_speakers = 1;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("n_speakers"), "{err}");

        let mut config = RunConfig::with_defaults(1, PathBuf::from("x"));
        config.eval.eval_fraction = 0.0;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("eval_fraction"), "{err}");
    }

    #[test]
    fn corpus_seed_derivation_is_stable() {
        let config = RunConfig::with_defaults(7, PathBuf::from("x"));
        let a = config.resolve_corpus().seed;
        let b = config.resolve_corpus().seed;
        assert_eq!(a, b);
        let mut pinned = config.clone();
        pinned.corpus.seed = Some(123);
        assert_eq!(pinned.resolve_corpus().seed, 123);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::with_defaults(1, PathBuf::from("x"));
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.fader.epochs = 10;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn config_json_round_trip() {
        let config = RunConfig::with_defaults(5, PathBuf::from("runs/a"));
        let text = config.canonical_json().unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.hash().unwrap(), config.hash().unwrap());
    }
}
