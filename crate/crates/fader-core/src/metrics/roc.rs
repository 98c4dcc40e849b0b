//! Binary accuracy, ROC curves, and the equal error rate.
//!
//! Scores are similarities: a trial is accepted when its score is at or
//! above the threshold. The EER is the intersection of the ROC polyline
//! with the anti-diagonal TPR = 1 - FPR, found by linear interpolation.

use crate::error::{Error, Result};

/// One verification trial: a score and whether it is a target trial.
#[derive(Clone, Copy, Debug)]
pub struct Trial {
    pub score: f64,
    pub is_target: bool,
}

/// Fraction of correct decisions at `threshold`. Scores equal to the
/// threshold are decided as positive.
pub fn binary_accuracy(probabilities: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    if probabilities.is_empty() || probabilities.len() != labels.len() {
        return Err(Error::Data(format!(
            "accuracy needs equal non-empty inputs, got {} scores and {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, l)| {
            let decision = **p >= threshold;
            decision == (**l >= 0.5)
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn check_both_classes(trials: &[Trial]) -> Result<(usize, usize)> {
    let targets = trials.iter().filter(|t| t.is_target).count();
    let nontargets = trials.len() - targets;
    if targets == 0 || nontargets == 0 {
        return Err(Error::Data(format!(
            "ROC needs both classes; got {targets} target and {nontargets} nontarget trials"
        )));
    }
    Ok((targets, nontargets))
}

/// (FPR, TPR) points: the (0, 0) endpoint plus one point per distinct score
/// threshold, ending at (1, 1). Both coordinates are nondecreasing.
pub fn roc_curve(trials: &[Trial]) -> Result<Vec<(f64, f64)>> {
    let (targets, nontargets) = check_both_classes(trials)?;
    let mut sorted: Vec<&Trial> = trials.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::with_capacity(trials.len() + 2);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        // Accept every trial tied at this threshold before emitting a point.
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].is_target {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nontargets as f64, tp as f64 / targets as f64));
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Equal error rate: linear interpolation of the ROC polyline against
/// TPR = 1 - FPR.
pub fn eer(trials: &[Trial]) -> Result<f64> {
    let points = roc_curve(trials)?;
    eer_from_roc(&points)
}

pub fn eer_from_roc(points: &[(f64, f64)]) -> Result<f64> {
    // g(p) = TPR + FPR - 1 is nondecreasing along the curve; the EER sits
    // where g crosses zero.
    for w in points.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        let g1 = y1 + x1 - 1.0;
        let g2 = y2 + x2 - 1.0;
        if g1 <= 0.0 && g2 >= 0.0 {
            let denom = g2 - g1;
            let t = if denom == 0.0 { 0.0 } else { -g1 / denom };
            return Ok(x1 + t * (x2 - x1));
        }
    }
    Err(Error::Numeric("ROC curve does not cross the anti-diagonal".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::SeedTree;

    fn trial(score: f64, is_target: bool) -> Trial {
        Trial { score, is_target }
    }

    #[test]
    fn accuracy_examples() {
        let probs = [0.9, 0.2, 0.8];
        let labels = [1.0, 0.0, 1.0];
        assert_eq!(binary_accuracy(&probs, &labels, 0.5).unwrap(), 1.0);

        // Complementing the labels complements the accuracy.
        let flipped = [0.0, 1.0, 0.0];
        assert_eq!(binary_accuracy(&probs, &flipped, 0.5).unwrap(), 0.0);

        let probs10 = [0.9, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.2, 0.9, 0.1];
        let labels10 = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert!((binary_accuracy(&probs10, &labels10, 0.5).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ties_decided_positive() {
        assert_eq!(binary_accuracy(&[0.5], &[1.0], 0.5).unwrap(), 1.0);
        assert_eq!(binary_accuracy(&[0.5], &[0.0], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_rejects_empty() {
        assert!(binary_accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn perfectly_separated_curve_hits_corner() {
        let trials = vec![trial(0.9, true), trial(0.8, true), trial(0.2, false), trial(0.1, false)];
        let points = roc_curve(&trials).unwrap();
        assert!(points.contains(&(0.0, 1.0)));
        assert_eq!(eer(&trials).unwrap(), 0.0);
    }

    #[test]
    fn identical_scores_give_diagonal_endpoints() {
        let trials = vec![trial(0.5, true), trial(0.5, false), trial(0.5, true)];
        let points = roc_curve(&trials).unwrap();
        assert_eq!(points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!((eer(&trials).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_scores_have_half_auc() {
        let mut rng = SeedTree::new(51).rng();
        let trials: Vec<Trial> = (0..10_000)
            .map(|_| trial(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0) < 0.5))
            .collect();
        let auc = roc_auc(&roc_curve(&trials).unwrap());
        assert!((auc - 0.5).abs() < 0.02, "auc = {auc}");
    }

    #[test]
    fn single_class_rejected() {
        let trials = vec![trial(0.5, true), trial(0.4, true)];
        assert!(roc_curve(&trials).is_err());
        assert!(eer(&trials).is_err());
    }

    #[test]
    fn roc_is_monotone() {
        let mut rng = SeedTree::new(52).rng();
        let trials: Vec<Trial> = (0..512)
            .map(|_| {
                let is_target = rng.random_range(0.0..1.0) < 0.3;
                let base = if is_target { 0.6 } else { 0.4 };
                trial(base + rng.random_range(-0.5..0.5), is_target)
            })
            .collect();
        let points = roc_curve(&trials).unwrap();
        for w in points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert_eq!(*points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let mut rng = SeedTree::new(53).rng();
        let trials: Vec<Trial> = (0..300)
            .map(|_| {
                let is_target = rng.random_range(0.0..1.0) < 0.4;
                let base = if is_target { 1.0 } else { 0.0 };
                trial(base + rng.random_range(-1.2..1.2), is_target)
            })
            .collect();
        let base = eer(&trials).unwrap();
        let transformed: Vec<Trial> = trials
            .iter()
            .map(|t| trial(t.score.exp() + t.score.atan(), t.is_target))
            .collect();
        assert_eq!(base, eer(&transformed).unwrap());
    }
}
