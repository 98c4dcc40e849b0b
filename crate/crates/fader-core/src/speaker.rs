//! Synthetic speaker-embedding corpus with known identity/gender structure,
//! plus input standardization and corpus file I/O.
//!
//! Each utterance embedding is `h = tanh(M (u_id + g * strength * v + eps))`
//! where `M` is a fixed random mixing matrix, `u_id` a per-speaker identity
//! vector, `v` a fixed unit gender direction, `g` the speaker's gender in
//! {0, 1}, and `eps` per-utterance noise with scale `noise_sigma`. Identity
//! vectors and noise are sampled orthogonal to `v`, so the gender attribute
//! occupies its own axis (nonlinearly mixed by `M` and the tanh squashing)
//! while identity and utterance variability live in the complement.
//! All randomness derives from the config seed; generation is a pure
//! function of the config and is parallelized per speaker over
//! per-speaker seed substreams.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;
use crate::rng::SeedTree;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Fraction of male speakers.
    #[serde(default = "default_gender_balance")]
    pub gender_balance: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_gender_strength")]
    pub gender_strength: f64,
    pub seed: u64,
}

fn default_embedding_dim() -> usize {
    128
}

fn default_gender_balance() -> f64 {
    0.5
}

fn default_noise_sigma() -> f64 {
    0.3
}

fn default_gender_strength() -> f64 {
    1.0
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            n_speakers: 40,
            utterances_per_speaker: 50,
            embedding_dim: default_embedding_dim(),
            gender_balance: default_gender_balance(),
            noise_sigma: default_noise_sigma(),
            gender_strength: default_gender_strength(),
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!(
                "corpus.n_speakers must be >= 2, got {}",
                self.n_speakers
            )));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Config(format!(
                "corpus.utterances_per_speaker must be >= 2, got {}",
                self.utterances_per_speaker
            )));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("corpus.embedding_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gender_balance) {
            return Err(Error::Config(format!(
                "corpus.gender_balance must lie in [0, 1], got {}",
                self.gender_balance
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "corpus.noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.gender_strength > 0.0) {
            return Err(Error::Config(format!(
                "corpus.gender_strength must be > 0, got {}",
                self.gender_strength
            )));
        }
        Ok(())
    }

    /// Number of male speakers: rounded balance, with both genders present
    /// whenever the balance is strictly between 0 and 1.
    pub fn male_count(&self) -> usize {
        let raw = (self.n_speakers as f64 * self.gender_balance).round() as usize;
        if self.gender_balance > 0.0 && self.gender_balance < 1.0 {
            raw.clamp(1, self.n_speakers - 1)
        } else {
            raw.min(self.n_speakers)
        }
    }
}

/// One utterance's speaker embedding with its identity and gender labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub speaker_id: u32,
    /// 0 female, 1 male.
    pub gender: u8,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub embedding_dim: usize,
    pub records: Vec<SpeakerEmbedding>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_speakers(&self) -> usize {
        self.records.iter().map(|r| r.speaker_id).max().map_or(0, |m| m as usize + 1)
    }

    pub fn has_both_genders(&self) -> bool {
        let mut seen = [false, false];
        for r in &self.records {
            seen[r.gender as usize] = true;
        }
        seen[0] && seen[1]
    }

    /// Stack the selected records into an `[k, dim]` matrix.
    pub fn stack(&self, indices: &[usize]) -> Tensor {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.records[i].values.clone()).collect();
        Tensor::from_rows(&rows).expect("corpus rows are uniform")
    }

    pub fn genders(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| f64::from(self.records[i].gender)).collect()
    }

    pub fn speaker_ids(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.records[i].speaker_id as usize).collect()
    }
}

fn standard_normal_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Spread of the per-speaker identity vectors. Kept below the gender offset
/// so the attribute axis carries the largest share of corpus variance, and
/// comparable to the utterance noise so the autoencoder bottleneck has to
/// trade identity detail against noise.
const IDENTITY_SCALE: f64 = 0.17;

/// Remove the component of `x` along the unit vector `v`, in place.
fn project_out(x: &mut [f64], v: &[f64]) {
    let dot: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= dot * vi;
    }
}

/// Random rotation: Gram-Schmidt orthonormalization of a Gaussian matrix,
/// row-major `[dim, dim]`.
fn random_rotation(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = (0..dim).map(|_| standard_normal_vec(rng, dim)).collect();
    for i in 0..dim {
        for j in 0..i {
            let (head, tail) = rows.split_at_mut(i);
            let prev = &head[j];
            let cur = &mut tail[0];
            let dot: f64 = cur.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (c, p) in cur.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut rows[i] {
            *v /= norm;
        }
    }
    rows.into_iter().flatten().collect()
}

/// Generate the synthetic corpus. Bit-reproducible from the config alone;
/// output ordered by (speaker_id, utterance index).
pub fn generate_corpus(config: &SyntheticCorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let dim = config.embedding_dim;
    let root = SeedTree::new(config.seed);

    // Fixed unit gender direction.
    let mut gender_dir = standard_normal_vec(&mut root.derive("gender-direction").rng(), dim);
    let norm = gender_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut gender_dir {
        *v /= norm;
    }

    // Fixed random rotation. An orthogonal mixing matrix spreads the gender
    // axis across coordinates without distorting the variance structure, so
    // the attribute stays the corpus's dominant direction after mixing.
    let mixing = random_rotation(&mut root.derive("mixing").rng(), dim);

    let male_count = config.male_count();
    let speakers = root.derive("speakers");
    let per_speaker: Vec<Vec<SpeakerEmbedding>> = par::map_range(config.n_speakers, |s| {
        let stree = speakers.index(s as u64);
        let gender = u8::from(s < male_count);

        let mut identity = standard_normal_vec(&mut stree.derive("identity").rng(), dim);
        for u in &mut identity {
            *u *= IDENTITY_SCALE;
        }
        project_out(&mut identity, &gender_dir);
        if gender == 1 {
            for (ui, vi) in identity.iter_mut().zip(&gender_dir) {
                *ui += config.gender_strength * vi;
            }
        }

        (0..config.utterances_per_speaker)
            .map(|u| {
                let mut noise =
                    standard_normal_vec(&mut stree.derive("utterance").index(u as u64).rng(), dim);
                project_out(&mut noise, &gender_dir);
                let pre: Vec<f64> = identity
                    .iter()
                    .zip(&noise)
                    .map(|(id, n)| id + config.noise_sigma * n)
                    .collect();
                let mut values = vec![0.0; dim];
                for (r, out) in values.iter_mut().enumerate() {
                    let row = &mixing[r * dim..(r + 1) * dim];
                    let mut acc = 0.0;
                    for (m, p) in row.iter().zip(&pre) {
                        acc = m.mul_add(*p, acc);
                    }
                    *out = acc.tanh();
                }
                SpeakerEmbedding { speaker_id: s as u32, gender, values }
            })
            .collect()
    });

    Ok(Corpus { embedding_dim: dim, records: per_speaker.into_iter().flatten().collect() })
}

/// Per-dimension affine standardization fitted on a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Stored standard deviation, clamped below by `epsilon`.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

pub const STANDARDIZER_EPSILON: f64 = 1e-8;

/// Fit per-dimension mean and (population) standard deviation.
/// Zero-variance dimensions are clamped to `epsilon`, mapping them to 0.
pub fn fit_standardizer(rows: &Tensor) -> Result<Standardizer> {
    if rows.rows() == 0 {
        return Err(Error::Data("cannot fit a standardizer on an empty corpus".into()));
    }
    let (n, d) = rows.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(rows.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(rows.row(r)).zip(&mean) {
            let diff = v - m;
            *s += diff * diff;
        }
    }
    let std: Vec<f64> =
        var.iter().map(|s| (s / n as f64).sqrt().max(STANDARDIZER_EPSILON)).collect();
    Ok(Standardizer { mean, std, epsilon: STANDARDIZER_EPSILON })
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn apply(&self, rows: &Tensor) -> Result<Tensor> {
        self.check_dim(rows)?;
        let out: Vec<Vec<f64>> = (0..rows.rows()).map(|r| self.apply_row(rows.row(r))).collect();
        Tensor::from_rows(&out)
    }

    pub fn invert(&self, rows: &Tensor) -> Result<Tensor> {
        self.check_dim(rows)?;
        let out: Vec<Vec<f64>> = (0..rows.rows()).map(|r| self.invert_row(rows.row(r))).collect();
        Tensor::from_rows(&out)
    }

    fn check_dim(&self, rows: &Tensor) -> Result<()> {
        if rows.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "standardizer dimension {} does not match input width {}",
                self.dim(),
                rows.cols()
            )));
        }
        Ok(())
    }
}

/// Per-speaker train/eval split with deterministic shuffling.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub fn split_corpus(corpus: &Corpus, eval_fraction: f64, seed: SeedTree) -> Result<Split> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::Config(format!(
            "eval fraction must lie in [0, 1), got {eval_fraction}"
        )));
    }
    let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.records.iter().enumerate() {
        by_speaker.entry(r.speaker_id).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (speaker, mut indices) in by_speaker {
        use rand::seq::SliceRandom;
        let mut rng = seed.derive("split").index(u64::from(speaker)).rng();
        indices.shuffle(&mut rng);
        let mut n_eval = (indices.len() as f64 * eval_fraction).round() as usize;
        if eval_fraction > 0.0 && indices.len() >= 2 {
            n_eval = n_eval.clamp(1, indices.len() - 1);
        }
        eval.extend_from_slice(&indices[..n_eval]);
        train.extend_from_slice(&indices[n_eval..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok(Split { train, eval })
}

// ---- corpus file formats --------------------------------------------------

/// Write one CSV record per utterance: speaker_id, gender, then values.
pub fn save_csv(path: &Path, corpus: &Corpus) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["speaker_id".to_string(), "gender".to_string()];
    header.extend((0..corpus.embedding_dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in &corpus.records {
        let mut record = vec![r.speaker_id.to_string(), r.gender.to_string()];
        record.extend(r.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Corpus> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::Data("corpus CSV needs speaker_id, gender, and values".into()));
    }
    let dim = headers.len() - 2;
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let speaker_id: u32 = row
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data("bad speaker_id in corpus CSV".into()))?;
        let gender: u8 = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data("bad gender in corpus CSV".into()))?;
        if gender > 1 {
            return Err(Error::Data(format!("gender must be 0 or 1, got {gender}")));
        }
        let mut values = Vec::with_capacity(dim);
        for i in 0..dim {
            let v: f64 = row
                .get(2 + i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("bad embedding value in corpus CSV".into()))?;
            values.push(v);
        }
        records.push(SpeakerEmbedding { speaker_id, gender, values });
    }
    Ok(Corpus { embedding_dim: dim, records })
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    format: String,
    embedding_dim: usize,
    labels: Vec<(u32, u8)>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

const CORPUS_FORMAT: &str = "fader-corpus-v1";

/// Write `stem.manifest.json` plus `stem.bin` (little-endian f64 values in
/// record order).
pub fn save_binary(stem: &Path, corpus: &Corpus, meta: &BTreeMap<String, String>) -> Result<()> {
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.to_string(),
        embedding_dim: corpus.embedding_dim,
        labels: corpus.records.iter().map(|r| (r.speaker_id, r.gender)).collect(),
        meta: meta.clone(),
    };
    fs::write(manifest_path(stem), serde_json::to_vec_pretty(&manifest)?)?;
    let mut bin = Vec::with_capacity(corpus.len() * corpus.embedding_dim * 8);
    for r in &corpus.records {
        for v in &r.values {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(stem.with_extension("bin"))?.write_all(&bin)?;
    Ok(())
}

pub fn load_binary(stem: &Path) -> Result<(Corpus, BTreeMap<String, String>)> {
    let manifest: CorpusManifest = serde_json::from_slice(&fs::read(manifest_path(stem))?)?;
    if manifest.format != CORPUS_FORMAT {
        return Err(Error::Data(format!("unsupported corpus format '{}'", manifest.format)));
    }
    let mut data = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut data)?;
    let expect = manifest.labels.len() * manifest.embedding_dim * 8;
    if data.len() != expect {
        return Err(Error::Data(format!(
            "corpus sidecar holds {} bytes, expected {}",
            data.len(),
            expect
        )));
    }
    let mut records = Vec::with_capacity(manifest.labels.len());
    for (i, &(speaker_id, gender)) in manifest.labels.iter().enumerate() {
        let offset = i * manifest.embedding_dim * 8;
        let values: Vec<f64> = data[offset..offset + manifest.embedding_dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        records.push(SpeakerEmbedding { speaker_id, gender, values });
    }
    Ok((Corpus { embedding_dim: manifest.embedding_dim, records }, manifest.meta))
}

fn manifest_path(stem: &Path) -> std::path::PathBuf {
    let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    stem.with_file_name(name)
}
