//! Objective evaluation of trained models: gender accuracy per conditioning
//! mode (with and without the adversarial loss), speaker-verification EER
//! per mode, and mutual information between the gender label and each
//! representation after PCA reduction.

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::fader::{manipulate_batch, Conditioning, FaderTrainResult, PretrainedDiscriminator};
use crate::metrics::{
    binary_accuracy, eer_from_roc, pca_fit, pca_project, roc_curve, select_mi_pair,
    speaker_verification_eer, train_speaker_classifier, Trial,
};
use crate::nn::Tensor;
use crate::rng::SeedTree;
use crate::speaker::{Corpus, Split};

/// Table row vocabulary shared with the paper-style reports.
pub const MODE_ORIGINAL: &str = "original";
pub const MODE_EST: &str = "est_gender";
pub const MODE_INV: &str = "inv_gender";
pub const MODE_DE: &str = "de_gender";
pub const REPR_LATENT: &str = "latent_code";

pub const CONDITIONED_MODES: [(&str, Conditioning); 3] = [
    (MODE_EST, Conditioning::Estimated),
    (MODE_INV, Conditioning::Inverted),
    (MODE_DE, Conditioning::Neutral),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportMeta {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub n_speakers: usize,
    pub n_utterances: usize,
    pub n_eval: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenderAccuracyRow {
    /// "with_adv" or "without_adv".
    pub variant: String,
    pub mode: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EerRow {
    pub mode: String,
    pub eer: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiRow {
    pub representation: String,
    pub mutual_information: f64,
    pub pca_pair: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    pub gender_accuracy: Vec<GenderAccuracyRow>,
    pub speaker_eer: Vec<EerRow>,
    pub mutual_information: Vec<MiRow>,
}

/// 2-D scatter of a representation on the eval split, on the PCA pair
/// selected by the MI search.
#[derive(Clone, Debug)]
pub struct ScatterData {
    pub pair: [usize; 2],
    pub points: Vec<[f64; 2]>,
    pub genders: Vec<u8>,
    pub speakers: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct EvalArtifacts {
    /// ROC polylines per conditioning mode, in mode order.
    pub roc: Vec<(String, Vec<(f64, f64)>)>,
    pub scatter_embedding: ScatterData,
    pub scatter_latent: ScatterData,
}

fn ensure_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite values")))
    }
}

/// MI of one representation after PCA reduction, with the selected pair.
fn representation_mi(
    rows: &Tensor,
    labels: &[usize],
    config: &EvalConfig,
) -> Result<(f64, [usize; 2], Tensor)> {
    let dims = config.pca_dims.min(rows.cols());
    if dims < 2 {
        return Err(Error::Data(format!(
            "representation of width {} cannot feed a 2-D MI search",
            rows.cols()
        )));
    }
    let model = pca_fit(rows)?;
    let projected = pca_project(&model, rows, dims)?;
    let as_rows: Vec<Vec<f64>> = (0..projected.rows()).map(|r| projected.row(r).to_vec()).collect();
    let ((a, b), mi) = select_mi_pair(&as_rows, labels, config.knn_k)?;
    Ok((mi, [a, b], projected))
}

fn scatter_for(
    projected: &Tensor,
    pair: [usize; 2],
    corpus: &Corpus,
    subset: &[usize],
) -> ScatterData {
    ScatterData {
        pair,
        points: subset
            .iter()
            .map(|&i| [projected.get(i, pair[0]), projected.get(i, pair[1])])
            .collect(),
        genders: subset.iter().map(|&i| corpus.records[i].gender).collect(),
        speakers: subset.iter().map(|&i| corpus.records[i].speaker_id).collect(),
    }
}

/// Run every objective evaluation. `adv` drives the EER, MI, and scatter
/// sections; both variants contribute gender-accuracy rows when present.
pub fn run_evaluation(
    corpus: &Corpus,
    split: &Split,
    disc: &PretrainedDiscriminator,
    adv: Option<&FaderTrainResult>,
    noadv: Option<&FaderTrainResult>,
    config: &EvalConfig,
    seed: SeedTree,
    meta: ReportMeta,
) -> Result<(EvaluationReport, EvalArtifacts)> {
    if disc.embedding_dim != corpus.embedding_dim {
        return Err(Error::Dimension(format!(
            "discriminator expects dimension {} but the corpus has {}",
            disc.embedding_dim, corpus.embedding_dim
        )));
    }
    if adv.is_none() && noadv.is_none() {
        return Err(Error::Data("evaluation needs at least one trained fader variant".into()));
    }

    let eval_x = corpus.stack(&split.eval);
    let eval_y = corpus.genders(&split.eval);
    ensure_finite("eval embeddings", &eval_x)?;

    // ---- gender accuracy table (per variant, per conditioning mode) -----
    let mut gender_accuracy = Vec::new();
    for (variant, result) in [("with_adv", adv), ("without_adv", noadv)] {
        let Some(result) = result else { continue };
        let posts = disc.smooth_posteriors(&eval_x)?;
        gender_accuracy.push(GenderAccuracyRow {
            variant: variant.to_string(),
            mode: MODE_ORIGINAL.to_string(),
            accuracy: binary_accuracy(&posts, &eval_y, 0.5)?,
        });
        for (mode, conditioning) in CONDITIONED_MODES {
            let reconstructed =
                manipulate_batch(&result.autoencoder, disc, &eval_x, conditioning)?;
            ensure_finite("reconstruction", &reconstructed)?;
            let posts = disc.smooth_posteriors(&reconstructed)?;
            gender_accuracy.push(GenderAccuracyRow {
                variant: variant.to_string(),
                mode: mode.to_string(),
                accuracy: binary_accuracy(&posts, &eval_y, 0.5)?,
            });
        }
    }

    // The remaining sections follow the adversarially trained fader.
    let primary = adv.or(noadv).expect("checked above");

    // ---- speaker verification ------------------------------------------
    let train_x = corpus.stack(&split.train);
    ensure_finite("train embeddings", &train_x)?;
    let classifier = train_speaker_classifier(
        &train_x,
        &corpus.speaker_ids(&split.train),
        corpus.n_speakers(),
        &config.classifier_config(),
    )?;
    let eval_ids = corpus.speaker_ids(&split.eval);
    let mut speaker_eer = Vec::new();
    let mut roc = Vec::new();
    {
        let mut rng = seed.derive("trials").derive(MODE_ORIGINAL).rng();
        let (eer, points) = speaker_verification_eer(
            &eval_x,
            &eval_ids,
            &classifier,
            |h| Ok(h.to_vec()),
            config.impostors_per_trial,
            &mut rng,
        )?;
        speaker_eer.push(EerRow { mode: MODE_ORIGINAL.to_string(), eer });
        roc.push((MODE_ORIGINAL.to_string(), points));
    }
    for (mode, conditioning) in CONDITIONED_MODES {
        let reconstructed = manipulate_batch(&primary.autoencoder, disc, &eval_x, conditioning)?;
        ensure_finite("reconstruction", &reconstructed)?;
        let mut rng = seed.derive("trials").derive(mode).rng();
        let (eer, points) = speaker_verification_eer(
            &reconstructed,
            &eval_ids,
            &classifier,
            |h| Ok(h.to_vec()),
            config.impostors_per_trial,
            &mut rng,
        )?;
        speaker_eer.push(EerRow { mode: mode.to_string(), eer });
        roc.push((mode.to_string(), points));
    }

    // ---- mutual information over the full corpus ------------------------
    let all_indices: Vec<usize> = (0..corpus.len()).collect();
    let all_x = corpus.stack(&all_indices);
    let all_labels: Vec<usize> =
        corpus.records.iter().map(|r| usize::from(r.gender)).collect();

    let mut mutual_information = Vec::new();
    let (mi, pair, projected_h) = representation_mi(&all_x, &all_labels, config)?;
    mutual_information.push(MiRow {
        representation: MODE_ORIGINAL.to_string(),
        mutual_information: mi,
        pca_pair: pair,
    });
    let scatter_embedding = scatter_for(&projected_h, pair, corpus, &split.eval);

    for (mode, conditioning) in CONDITIONED_MODES {
        let reconstructed = manipulate_batch(&primary.autoencoder, disc, &all_x, conditioning)?;
        ensure_finite("reconstruction", &reconstructed)?;
        let (mi, pair, _) = representation_mi(&reconstructed, &all_labels, config)?;
        mutual_information.push(MiRow {
            representation: mode.to_string(),
            mutual_information: mi,
            pca_pair: pair,
        });
    }

    let latent = primary.autoencoder.encode_batch(&all_x)?;
    ensure_finite("latent codes", &latent)?;
    let (mi, pair, projected_z) = representation_mi(&latent, &all_labels, config)?;
    mutual_information.push(MiRow {
        representation: REPR_LATENT.to_string(),
        mutual_information: mi,
        pca_pair: pair,
    });
    let scatter_latent = scatter_for(&projected_z, pair, corpus, &split.eval);

    let report = EvaluationReport {
        meta,
        gender_accuracy,
        speaker_eer,
        mutual_information,
    };
    Ok((report, EvalArtifacts { roc, scatter_embedding, scatter_latent }))
}

/// Recompute an ROC directly from trials; exposed for the CSV export tests.
pub fn roc_points(trials: &[Trial]) -> Result<(f64, Vec<(f64, f64)>)> {
    let points = roc_curve(trials)?;
    Ok((eer_from_roc(&points)?, points))
}
