//! Deterministic end-to-end pipeline: corpus generation, discriminator
//! pre-training, fader training (with and without the adversarial loss),
//! evaluation, and report aggregation. Every artifact is a pure function
//! of (config, seed); configs are embedded next to the outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{run_evaluation, EvalArtifacts, EvaluationReport, ReportMeta};
use crate::fader::{
    pretrain_discriminator, train_fader, AttributeAutoencoder, AttributeDiscriminator,
    EpochLosses, FaderTrainConfig, FaderTrainResult, PretrainedDiscriminator,
};
use crate::nn::checkpoint;
use crate::speaker::{self, generate_corpus, split_corpus, Corpus, Split};

pub const CORPUS_STEM: &str = "corpus/corpus";
pub const CORPUS_CSV: &str = "corpus/corpus.csv";
pub const DISCRIMINATOR_STEM: &str = "checkpoints/discriminator";
pub const EVAL_DIR: &str = "eval";
pub const REPORT_FILE: &str = "eval/report.json";

pub fn variant_dir(use_adversarial: bool) -> &'static str {
    if use_adversarial {
        "checkpoints/adv"
    } else {
        "checkpoints/noadv"
    }
}

pub fn history_file(use_adversarial: bool) -> &'static str {
    if use_adversarial {
        "history_adv.csv"
    } else {
        "history_noadv.csv"
    }
}

fn embed_config(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)?;
    fs::write(config.out_dir.join("config.json"), config.canonical_json()?)?;
    Ok(())
}

/// Generate and persist the corpus (CSV and binary forms).
pub fn gen_data(config: &RunConfig) -> Result<Corpus> {
    config.validate()?;
    embed_config(config)?;
    let corpus_config = config.resolve_corpus();
    let corpus = generate_corpus(&corpus_config)?;

    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), corpus_config.seed.to_string());
    meta.insert("config_sha256".to_string(), config.hash()?);
    speaker::save_binary(&config.out_dir.join(CORPUS_STEM), &corpus, &meta)?;
    speaker::save_csv(&config.out_dir.join(CORPUS_CSV), &corpus)?;
    Ok(corpus)
}

pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    let stem = config.out_dir.join(CORPUS_STEM);
    if !stem.with_extension("bin").exists() {
        return Err(Error::Data(format!(
            "no corpus at {}; run gen-data first",
            stem.display()
        )));
    }
    Ok(speaker::load_binary(&stem)?.0)
}

pub fn split_for(config: &RunConfig, corpus: &Corpus) -> Result<Split> {
    split_corpus(corpus, config.eval.eval_fraction, config.seed_tree())
}

/// Pre-train the gender discriminator; returns held-out accuracy.
pub fn pretrain(config: &RunConfig) -> Result<f64> {
    config.validate()?;
    embed_config(config)?;
    let corpus = load_corpus(config)?;
    let split = split_for(config, &corpus)?;
    let (disc, accuracy) = pretrain_discriminator(
        &corpus,
        &split,
        &config.pretrain,
        config.seed_tree().derive("pretrain"),
    )?;
    let mut ckpt = disc.to_checkpoint()?;
    ckpt.meta.insert("holdout_accuracy".into(), format!("{accuracy}"));
    ckpt.meta.insert("config_sha256".into(), config.hash()?);
    checkpoint::save(&config.out_dir.join(DISCRIMINATOR_STEM), &ckpt)?;
    Ok(accuracy)
}

pub fn load_discriminator(config: &RunConfig) -> Result<PretrainedDiscriminator> {
    let stem = config.out_dir.join(DISCRIMINATOR_STEM);
    if !stem.with_extension("json").exists() {
        return Err(Error::Data(format!(
            "no discriminator checkpoint at {}; run pretrain first",
            stem.display()
        )));
    }
    PretrainedDiscriminator::from_checkpoint(&checkpoint::load(&stem)?)
}

fn write_history(path: &Path, history: &[EpochLosses]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "L_RC", "L_ACC", "L_ADV"])?;
    for row in history {
        w.write_record([
            row.epoch.to_string(),
            format!("{:?}", row.reconstruction),
            format!("{:?}", row.discriminator),
            format!("{:?}", row.adversarial),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn read_history(path: &Path) -> Result<Vec<EpochLosses>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("malformed loss history".into()))
        };
        out.push(EpochLosses {
            epoch: field(0)? as usize,
            reconstruction: field(1)?,
            discriminator: field(2)?,
            adversarial: field(3)?,
        });
    }
    Ok(out)
}

fn load_variant(dir: &Path) -> Result<Option<FaderTrainResult>> {
    let ae_stem = dir.join("autoencoder");
    let c_stem = dir.join("attr_disc");
    if !ae_stem.with_extension("json").exists() {
        return Ok(None);
    }
    let ae_ckpt = checkpoint::load(&ae_stem)?;
    let c_ckpt = checkpoint::load(&c_stem)?;
    let autoencoder = AttributeAutoencoder::from_checkpoint(&ae_ckpt)?;
    let discriminator = AttributeDiscriminator::from_checkpoint(&c_ckpt)?;
    let history_path = dir.join("history.csv");
    let history =
        if history_path.exists() { read_history(&history_path)? } else { Vec::new() };
    let epochs_done = history.len();
    let opt_autoencoder = ae_ckpt
        .optimizer
        .ok_or_else(|| Error::Data("autoencoder checkpoint lacks optimizer state".into()))?;
    let opt_discriminator = c_ckpt
        .optimizer
        .ok_or_else(|| Error::Data("classifier checkpoint lacks optimizer state".into()))?;
    Ok(Some(FaderTrainResult {
        autoencoder,
        discriminator,
        history,
        opt_autoencoder,
        opt_discriminator,
        epochs_done,
    }))
}

fn save_variant(out_dir: &Path, variant: &str, result: &FaderTrainResult) -> Result<()> {
    let dir = out_dir.join(variant);
    fs::create_dir_all(&dir)?;
    checkpoint::save(
        &dir.join("autoencoder"),
        &result.autoencoder.to_checkpoint(Some(&result.opt_autoencoder)),
    )?;
    checkpoint::save(
        &dir.join("attr_disc"),
        &result.discriminator.to_checkpoint(Some(&result.opt_discriminator)),
    )?;
    write_history(&dir.join("history.csv"), &result.history)?;
    Ok(())
}

/// Train the fader. With `use_adversarial` false this is the ablation run;
/// `resume` continues from an existing checkpoint of the same variant.
pub fn train(config: &RunConfig, use_adversarial: bool, resume: bool) -> Result<FaderTrainResult> {
    config.validate()?;
    embed_config(config)?;
    let corpus = load_corpus(config)?;
    let split = split_for(config, &corpus)?;

    let fader_config = FaderTrainConfig { use_adversarial, ..config.fader.clone() };
    let pretrained = match load_discriminator(config) {
        Ok(d) => Some(d),
        Err(_) if !fader_config.use_smooth_labels => None,
        Err(e) => return Err(e),
    };
    if let Some(d) = &pretrained {
        if d.embedding_dim != corpus.embedding_dim {
            return Err(Error::Dimension(format!(
                "discriminator dimension {} does not match corpus dimension {}",
                d.embedding_dim, corpus.embedding_dim
            )));
        }
    }

    let variant = variant_dir(use_adversarial);
    let previous = if resume { load_variant(&config.out_dir.join(variant))? } else { None };
    let result = train_fader(
        &corpus,
        &split.train,
        &fader_config,
        pretrained.as_ref(),
        config.seed_tree().derive("fader"),
        previous.as_ref(),
    )?;

    save_variant(&config.out_dir, variant, &result)?;
    write_history(&config.out_dir.join(history_file(use_adversarial)), &result.history)?;
    Ok(result)
}

/// Evaluate whatever variants exist under `ckpt_dir` and write the report
/// plus CSV plot data under `<out_dir>/eval/`.
pub fn evaluate(config: &RunConfig, ckpt_dir: &Path) -> Result<EvaluationReport> {
    config.validate()?;
    embed_config(config)?;
    let corpus = load_corpus(config)?;
    let split = split_for(config, &corpus)?;
    let disc = {
        let stem = ckpt_dir.join(DISCRIMINATOR_STEM);
        if !stem.with_extension("json").exists() {
            return Err(Error::Data(format!(
                "no discriminator checkpoint under {}",
                ckpt_dir.display()
            )));
        }
        PretrainedDiscriminator::from_checkpoint(&checkpoint::load(&stem)?)?
    };
    if disc.embedding_dim != corpus.embedding_dim {
        return Err(Error::Dimension(format!(
            "checkpoint dimension {} does not match corpus dimension {}",
            disc.embedding_dim, corpus.embedding_dim
        )));
    }
    let adv = load_variant(&ckpt_dir.join(variant_dir(true)))?;
    let noadv = load_variant(&ckpt_dir.join(variant_dir(false)))?;

    let meta = ReportMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_sha256: config.hash()?,
        n_speakers: corpus.n_speakers(),
        n_utterances: corpus.len(),
        n_eval: split.eval.len(),
    };
    let (report, artifacts) = run_evaluation(
        &corpus,
        &split,
        &disc,
        adv.as_ref(),
        noadv.as_ref(),
        &config.eval,
        config.seed_tree().derive("eval"),
        meta,
    )?;
    write_eval_outputs(&config.out_dir, &report, &artifacts)?;
    Ok(report)
}

fn write_eval_outputs(
    out_dir: &Path,
    report: &EvaluationReport,
    artifacts: &EvalArtifacts,
) -> Result<()> {
    let eval_dir = out_dir.join(EVAL_DIR);
    fs::create_dir_all(&eval_dir)?;
    fs::write(out_dir.join(REPORT_FILE), serde_json::to_vec_pretty(report)?)?;

    for (mode, points) in &artifacts.roc {
        let mut w = csv::Writer::from_path(eval_dir.join(format!("roc_{mode}.csv")))?;
        w.write_record(["fpr", "tpr"])?;
        for (fpr, tpr) in points {
            w.write_record([format!("{fpr:?}"), format!("{tpr:?}")])?;
        }
        w.flush()?;
    }

    for (name, scatter) in [
        ("pca_embedding.csv", &artifacts.scatter_embedding),
        ("pca_latent.csv", &artifacts.scatter_latent),
    ] {
        let mut w = csv::Writer::from_path(eval_dir.join(name))?;
        w.write_record([
            format!("pc{}", scatter.pair[0]),
            format!("pc{}", scatter.pair[1]),
            "gender".to_string(),
            "speaker_id".to_string(),
        ])?;
        for ((p, g), s) in scatter.points.iter().zip(&scatter.genders).zip(&scatter.speakers) {
            w.write_record([
                format!("{:?}", p[0]),
                format!("{:?}", p[1]),
                g.to_string(),
                s.to_string(),
            ])?;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(eval_dir.join("gender_accuracy.csv"))?;
    w.write_record(["variant", "mode", "accuracy"])?;
    for row in &report.gender_accuracy {
        w.write_record([&row.variant, &row.mode, &format!("{:?}", row.accuracy)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(eval_dir.join("eer.csv"))?;
    w.write_record(["mode", "eer"])?;
    for row in &report.speaker_eer {
        w.write_record([&row.mode, &format!("{:?}", row.eer)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(eval_dir.join("mi.csv"))?;
    w.write_record(["representation", "mutual_information", "pca_pair"])?;
    for row in &report.mutual_information {
        w.write_record([
            &row.representation,
            &format!("{:?}", row.mutual_information),
            &format!("{}-{}", row.pca_pair[0], row.pca_pair[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---- aggregation ------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    pub mean: f64,
    pub values: Vec<f64>,
}

/// Multi-run summary: means over every report found under the input
/// directory, keyed by table row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub gender_accuracy: Vec<AggregateRow>,
    pub speaker_eer: Vec<AggregateRow>,
    pub mutual_information: Vec<AggregateRow>,
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(REPORT_FILE).exists() {
        out.push(dir.join(REPORT_FILE));
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() && path.file_name().map(|n| n != "eval").unwrap_or(true) {
            find_reports(&path, out)?;
        }
    }
    Ok(())
}

fn aggregate_rows(rows: Vec<(String, f64)>) -> Vec<AggregateRow> {
    let mut keyed: Vec<(String, Vec<f64>)> = Vec::new();
    for (key, value) in rows {
        match keyed.iter_mut().find(|(k, _)| *k == key) {
            Some((_, values)) => values.push(value),
            None => keyed.push((key, vec![value])),
        }
    }
    keyed
        .into_iter()
        .map(|(key, values)| AggregateRow {
            key,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            values,
        })
        .collect()
}

/// Aggregate every `eval/report.json` below `in_dir` into one summary.
pub fn report(in_dir: &Path, out_file: &Path) -> Result<AggregateReport> {
    let mut paths = Vec::new();
    find_reports(in_dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no evaluation reports found under {}",
            in_dir.display()
        )));
    }
    paths.sort();

    let mut seeds = Vec::new();
    let mut accuracy = Vec::new();
    let mut eer = Vec::new();
    let mut mi = Vec::new();
    for path in &paths {
        let report: EvaluationReport = serde_json::from_slice(&fs::read(path)?)?;
        seeds.push(report.meta.seed);
        for row in report.gender_accuracy {
            accuracy.push((format!("{}/{}", row.variant, row.mode), row.accuracy));
        }
        for row in report.speaker_eer {
            eer.push((row.mode, row.eer));
        }
        for row in report.mutual_information {
            mi.push((row.representation, row.mutual_information));
        }
    }

    let aggregate = AggregateReport {
        runs: paths.len(),
        seeds,
        gender_accuracy: aggregate_rows(accuracy),
        speaker_eer: aggregate_rows(eer),
        mutual_information: aggregate_rows(mi),
    };
    if let Some(dir) = out_file.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out_file, serde_json::to_vec_pretty(&aggregate)?)?;
    Ok(aggregate)
}
