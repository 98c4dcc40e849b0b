//! k-nearest-neighbor mutual information between a discrete label and a
//! continuous 2-D variable, in nats.
//!
//! For each sample i with label y_i, let d_i be the Euclidean distance to
//! its k-th nearest neighbor *within the same class* (self excluded), and
//! let m_i count the points of the full sample (self included) strictly
//! inside that radius. With n_y the class counts,
//!
//! `I = psi(n) - <psi(n_{y_i})> + psi(k) - <psi(m_i)>`
//!
//! clamped at zero. Two sanity anchors: labels independent of the points
//! give I ~ 0, and a fully revealed balanced binary label gives ln 2.

use crate::error::{Error, Result};
use crate::par;

/// Digamma via upward recurrence into the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

/// MI estimate in nats between 2-D `points` and discrete `labels`.
/// Every class must contain more than `k` samples.
pub fn knn_mutual_information(points: &[[f64; 2]], labels: &[usize], k: usize) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::Data(format!(
            "MI needs equal non-empty inputs, got {} points and {} labels",
            points.len(),
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("MI neighbor count k must be >= 1".into()));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Numeric("MI input contains non-finite points".into()));
    }
    let n = points.len();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut class_counts = vec![0usize; n_classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    for (c, &count) in class_counts.iter().enumerate() {
        if count > 0 && count < k + 1 {
            return Err(Error::Data(format!(
                "class {c} has {count} samples; the k={k} estimator needs at least {}",
                k + 1
            )));
        }
    }
    // A constant label carries no information; the estimator's terms cancel
    // identically, so return the exact answer.
    if class_counts.iter().filter(|&&c| c > 0).count() <= 1 {
        return Ok(0.0);
    }

    let terms = par::map_range(n, |i| {
        let pi = points[i];
        // k-th smallest distance to same-class points, self excluded.
        let mut in_class: Vec<f64> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| dist(pi, points[j]))
            .collect();
        in_class.sort_by(f64::total_cmp);
        let radius = in_class[k - 1];
        // Points of the full sample strictly inside the radius, self included.
        let m_i = (0..n).filter(|&j| dist(pi, points[j]) < radius).count();
        digamma(class_counts[labels[i]] as f64) + digamma(m_i.max(1) as f64)
    });

    let mean_term: f64 = terms.iter().sum::<f64>() / n as f64;
    let mi = digamma(n as f64) + digamma(k as f64) - mean_term;
    Ok(mi.max(0.0))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Exhaustive search over all coordinate pairs of `data` (n rows of `dim`
/// columns), returning the pair with maximal MI against `labels` and its
/// value. Ties break toward lexicographically smaller pairs.
pub fn select_mi_pair(
    data: &[Vec<f64>],
    labels: &[usize],
    k: usize,
) -> Result<((usize, usize), f64)> {
    let dim = data.first().map_or(0, Vec::len);
    if dim < 2 {
        return Err(Error::Data(format!("pair selection needs >= 2 coordinates, got {dim}")));
    }
    let pairs: Vec<(usize, usize)> =
        (0..dim).flat_map(|a| ((a + 1)..dim).map(move |b| (a, b))).collect();
    let scores: Vec<Result<f64>> = par::map(&pairs, |&(a, b)| {
        let projected: Vec<[f64; 2]> = data.iter().map(|row| [row[a], row[b]]).collect();
        knn_mutual_information(&projected, labels, k)
    });

    let mut best: Option<((usize, usize), f64)> = None;
    for (pair, score) in pairs.iter().zip(scores) {
        let score = score?;
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((*pair, score)),
        }
    }
    Ok(best.expect("at least one pair"))
}
