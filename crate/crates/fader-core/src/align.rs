//! Phoneme/frame alignment: duration decompression, its converse
//! compression, and the two margin-based contrastive losses computed on
//! time-aligned embedding sequences.
//!
//! An utterance is a sequence of `N` phoneme occurrences covering `T`
//! audio frames. The decompression matrix `D` (binary, `N x T`) replicates
//! per-occurrence vectors across their aligned frames; compression pools
//! frames back to occurrences by averaging. All functions here are pure.
//!
//! Both losses share the contrastive form
//!
//! `L = sum_{i,j} [ 1_{i=j} d_{i,j} + 1_{i!=j} max(m - d_{i,j}, 0) ]`
//!
//! where `d` is the squared Euclidean distance between L2-normalized
//! vectors: per-frame vectors for the frame-level loss, per-symbol
//! centroids for the alphabet-level loss.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, ValueId};

/// Ordered list of distinct phoneme symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeAlphabet {
    symbols: Vec<String>,
}

impl PhonemeAlphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::Data("phoneme alphabet must contain at least one symbol".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &symbols {
            if !seen.insert(s.clone()) {
                return Err(Error::Data(format!("duplicate phoneme symbol '{s}'")));
            }
        }
        Ok(PhonemeAlphabet { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// One phoneme occurrence spanning frames `start..=end` (inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub symbol: usize,
    pub start: usize,
    pub end: usize,
}

impl Occurrence {
    pub fn duration(&self) -> usize {
        self.end - self.start + 1
    }
}

/// A validated time alignment: occurrences are contiguous, non-overlapping,
/// and cover frames `0..T-1` with duration >= 1 each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameAlignment {
    frames: usize,
    sequence: Vec<Occurrence>,
}

impl FrameAlignment {
    pub fn new(alphabet: &PhonemeAlphabet, sequence: Vec<Occurrence>) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::Data("alignment must contain at least one occurrence".into()));
        }
        let mut expected_start = 0usize;
        for (i, occ) in sequence.iter().enumerate() {
            if occ.symbol >= alphabet.len() {
                return Err(Error::Data(format!(
                    "occurrence {i} references symbol index {} outside alphabet of {}",
                    occ.symbol,
                    alphabet.len()
                )));
            }
            if occ.start != expected_start {
                return Err(Error::Data(format!(
                    "occurrence {i} starts at frame {} but frame {} is expected (gap or overlap)",
                    occ.start, expected_start
                )));
            }
            if occ.end < occ.start {
                return Err(Error::Data(format!(
                    "occurrence {i} ends at frame {} before it starts at {}",
                    occ.end, occ.start
                )));
            }
            expected_start = occ.end + 1;
        }
        Ok(FrameAlignment { frames: expected_start, sequence })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn occurrences(&self) -> &[Occurrence] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Index of the occurrence owning each frame.
    pub fn frame_owners(&self) -> Vec<usize> {
        let mut owners = vec![0usize; self.frames];
        for (n, occ) in self.sequence.iter().enumerate() {
            for t in occ.start..=occ.end {
                owners[t] = n;
            }
        }
        owners
    }

    /// Parse the alignment file format: one line per occurrence,
    /// `symbol start_frame end_frame`, frames 0-indexed inclusive.
    pub fn parse_with_alphabet(text: &str, alphabet: &PhonemeAlphabet) -> Result<Self> {
        let mut sequence = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (sym, start, end) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(a), Some(b), None) => (s, a, b),
                _ => {
                    return Err(Error::Data(format!(
                        "line {}: expected 'symbol start_frame end_frame'",
                        lineno + 1
                    )))
                }
            };
            let symbol = alphabet.index_of(sym).ok_or_else(|| {
                Error::Data(format!("line {}: unknown symbol '{}'", lineno + 1, sym))
            })?;
            let start: usize = start.parse().map_err(|_| {
                Error::Data(format!("line {}: bad start frame '{}'", lineno + 1, start))
            })?;
            let end: usize = end.parse().map_err(|_| {
                Error::Data(format!("line {}: bad end frame '{}'", lineno + 1, end))
            })?;
            sequence.push(Occurrence { symbol, start, end });
        }
        FrameAlignment::new(alphabet, sequence)
    }

    /// Parse, inferring the alphabet from first occurrence order.
    pub fn parse(text: &str) -> Result<(PhonemeAlphabet, Self)> {
        let mut symbols: Vec<String> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(sym) = line.split_whitespace().next() {
                if !symbols.iter().any(|s| s == sym) {
                    symbols.push(sym.to_string());
                }
            }
        }
        let alphabet = PhonemeAlphabet::new(symbols)?;
        let alignment = Self::parse_with_alphabet(text, &alphabet)?;
        Ok((alphabet, alignment))
    }

    /// Serialize to the alignment file format.
    pub fn to_file_string(&self, alphabet: &PhonemeAlphabet) -> String {
        let mut out = String::new();
        for occ in &self.sequence {
            let _ = writeln!(out, "{} {} {}", alphabet.symbol(occ.symbol), occ.start, occ.end);
        }
        out
    }
}

/// Binary `N x T` matrix mapping occurrences to frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecompressionMatrix {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl DecompressionMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, n: usize, t: usize) -> bool {
        self.mask[n * self.cols + t]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.cols];
        for n in 0..self.rows {
            for t in 0..self.cols {
                if self.mask[n * self.cols + t] {
                    sums[t] += 1;
                }
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.mask
            .chunks(self.cols)
            .map(|row| row.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// Membership rule used to fill the decompression matrix.
///
/// `InstanceMembership` assigns each frame to the occurrence that owns it,
/// which keeps every column summing to one and makes the matrix act as a
/// duration-replication operator even when a symbol repeats.
/// `SymbolEquality` marks `D[n, t] = 1` whenever the n-th occurrence and the
/// frame's owner share a symbol; repeated symbols then produce duplicate
/// rows and multi-one columns. It is provided for comparison only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MembershipRule {
    #[default]
    InstanceMembership,
    SymbolEquality,
}

/// Build the decompression matrix for an alignment.
pub fn build_decompression(alignment: &FrameAlignment) -> DecompressionMatrix {
    build_decompression_with(alignment, MembershipRule::InstanceMembership)
}

pub fn build_decompression_with(
    alignment: &FrameAlignment,
    rule: MembershipRule,
) -> DecompressionMatrix {
    let (n, t) = (alignment.len(), alignment.frames());
    let mut mask = vec![false; n * t];
    let owners = alignment.frame_owners();
    let occs = alignment.occurrences();
    for (row, occ) in occs.iter().enumerate() {
        for (frame, &owner) in owners.iter().enumerate() {
            mask[row * t + frame] = match rule {
                MembershipRule::InstanceMembership => owner == row,
                MembershipRule::SymbolEquality => occs[owner].symbol == occ.symbol,
            };
        }
    }
    DecompressionMatrix { rows: n, cols: t, mask }
}

/// `D^T * H_N`: replicate per-occurrence rows across their frames.
pub fn decompress(per_occurrence: &Tensor, d: &DecompressionMatrix) -> Result<Tensor> {
    if per_occurrence.rows() != d.rows() {
        return Err(Error::Dimension(format!(
            "decompress input has {} rows but the matrix has {}",
            per_occurrence.rows(),
            d.rows()
        )));
    }
    let dim = per_occurrence.cols();
    let mut data = vec![0.0; d.cols() * dim];
    for t in 0..d.cols() {
        for n in 0..d.rows() {
            if d.get(n, t) {
                let src = per_occurrence.row(n);
                let dst = &mut data[t * dim..(t + 1) * dim];
                for (o, v) in dst.iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
    }
    Tensor::new(d.cols(), dim, data)
}

/// Pool frames back to occurrences by averaging each occurrence's frames.
///
/// The mean is computed so that pooling replicated rows returns them
/// exactly: identical values short-circuit, and otherwise the values are
/// summed in a frame-order-independent (sorted) order before dividing.
pub fn compress(per_frame: &Tensor, d: &DecompressionMatrix) -> Result<Tensor> {
    if per_frame.rows() != d.cols() {
        return Err(Error::Dimension(format!(
            "compress input has {} rows but the matrix has {} columns",
            per_frame.rows(),
            d.cols()
        )));
    }
    let dim = per_frame.cols();
    let mut data = vec![0.0; d.rows() * dim];
    let mut column: Vec<f64> = Vec::new();
    for n in 0..d.rows() {
        let frames: Vec<usize> = (0..d.cols()).filter(|&t| d.get(n, t)).collect();
        if frames.is_empty() {
            return Err(Error::Data(format!("occurrence {n} owns no frames")));
        }
        for j in 0..dim {
            column.clear();
            column.extend(frames.iter().map(|&t| per_frame.get(t, j)));
            data[n * dim + j] = exact_symmetric_mean(&mut column);
        }
    }
    Tensor::new(d.rows(), dim, data)
}

/// Mean that is exact for constant inputs and invariant to input order.
fn exact_symmetric_mean(values: &mut [f64]) -> f64 {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return first;
    }
    values.sort_by(f64::total_cmp);
    let sum: f64 = values.iter().sum();
    sum / values.len() as f64
}

/// A pair of time-aligned embedding matrices with a contrastive margin.
#[derive(Clone, Debug)]
pub struct LinguisticEmbeddingPair {
    pub recognition: Tensor,
    pub text: Tensor,
    pub margin: f64,
}

impl LinguisticEmbeddingPair {
    pub fn new(recognition: Tensor, text: Tensor, margin: f64) -> Result<Self> {
        if recognition.shape() != text.shape() {
            return Err(Error::Dimension(format!(
                "embedding matrices have shapes {:?} and {:?}",
                recognition.shape(),
                text.shape()
            )));
        }
        if !(margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {margin}")));
        }
        Ok(LinguisticEmbeddingPair { recognition, text, margin })
    }
}

/// Loss value plus gradients with respect to both input matrices.
#[derive(Clone, Debug)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_recognition: Tensor,
    pub grad_text: Tensor,
    /// Alphabet symbols skipped because no frame carries them
    /// (alphabet-level loss only).
    pub excluded_symbols: Vec<String>,
}

fn rows_as_leaves(tape: &mut Tape, m: &Tensor) -> Vec<ValueId> {
    (0..m.rows()).map(|r| tape.leaf(Tensor::row_vector(m.row(r).to_vec()))).collect()
}

fn collect_row_grads(tape: &Tape, grads: &crate::nn::Gradients, ids: &[ValueId]) -> Tensor {
    let rows: Vec<Vec<f64>> = ids.iter().map(|&id| grads.get(id, tape)).collect();
    Tensor::from_rows(&rows).expect("gradient rows are uniform")
}

/// Frame-level contrastive loss over all ordered frame pairs:
/// matched frames (t = t') are pulled together, mismatched frames pushed
/// beyond the margin.
pub fn pseudo_contrastive_loss(pair: &LinguisticEmbeddingPair) -> Result<ContrastiveOutput> {
    let frames = pair.recognition.rows();
    let mut tape = Tape::new();
    let rec = rows_as_leaves(&mut tape, &pair.recognition);
    let txt = rows_as_leaves(&mut tape, &pair.text);

    let mut terms = Vec::with_capacity(frames * frames);
    for (t, &r) in rec.iter().enumerate() {
        for (t2, &x) in txt.iter().enumerate() {
            let d = tape.norm_sq_dist(r, x)?;
            if t == t2 {
                terms.push(d);
            } else {
                terms.push(tape.hinge(d, pair.margin));
            }
        }
    }
    let loss = tape.sum(&terms)?;
    let grads = tape.backward(loss)?;
    Ok(ContrastiveOutput {
        loss: tape.value(loss).scalar_value()?,
        grad_recognition: collect_row_grads(&tape, &grads, &rec),
        grad_text: collect_row_grads(&tape, &grads, &txt),
        excluded_symbols: Vec::new(),
    })
}

/// Alphabet-level contrastive loss.
///
/// Per-symbol centroids of the L2-normalized frame rows are built for both
/// matrices; the distance table compares re-normalized centroids, pulling
/// same-symbol centroids together and pushing different symbols beyond the
/// margin. Alphabet symbols with no aligned frame are excluded and reported.
pub fn phoneme_contrastive_loss(
    recognition: &Tensor,
    text: &Tensor,
    alignment: &FrameAlignment,
    alphabet: &PhonemeAlphabet,
    margin: f64,
) -> Result<ContrastiveOutput> {
    if recognition.shape() != text.shape() {
        return Err(Error::Dimension(format!(
            "embedding matrices have shapes {:?} and {:?}",
            recognition.shape(),
            text.shape()
        )));
    }
    if recognition.rows() != alignment.frames() {
        return Err(Error::Dimension(format!(
            "embeddings cover {} frames but the alignment covers {}",
            recognition.rows(),
            alignment.frames()
        )));
    }
    if !(margin > 0.0) {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }

    let owners = alignment.frame_owners();
    let occs = alignment.occurrences();

    // Frames carrying each symbol, in frame order.
    let mut frames_of: Vec<Vec<usize>> = vec![Vec::new(); alphabet.len()];
    for (t, &owner) in owners.iter().enumerate() {
        frames_of[occs[owner].symbol].push(t);
    }
    let present: Vec<usize> = (0..alphabet.len()).filter(|&s| !frames_of[s].is_empty()).collect();
    let excluded_symbols: Vec<String> = (0..alphabet.len())
        .filter(|&s| frames_of[s].is_empty())
        .map(|s| alphabet.symbol(s).to_string())
        .collect();
    if present.is_empty() {
        return Err(Error::Data("no alphabet symbol has aligned frames".into()));
    }

    let mut tape = Tape::new();
    let rec = rows_as_leaves(&mut tape, recognition);
    let txt = rows_as_leaves(&mut tape, text);

    let centroid = |tape: &mut Tape, rows: &[ValueId], frames: &[usize]| -> Result<ValueId> {
        let normalized: Vec<ValueId> = frames
            .iter()
            .map(|&t| tape.row_normalize(rows[t]))
            .collect::<Result<_>>()?;
        let total = tape.sum(&normalized)?;
        Ok(tape.scale(total, 1.0 / frames.len() as f64))
    };

    let mut rec_centroids = Vec::with_capacity(present.len());
    let mut txt_centroids = Vec::with_capacity(present.len());
    for &s in &present {
        rec_centroids.push(centroid(&mut tape, &rec, &frames_of[s])?);
        txt_centroids.push(centroid(&mut tape, &txt, &frames_of[s])?);
    }

    let mut terms = Vec::with_capacity(present.len() * present.len());
    for (i, &ca) in rec_centroids.iter().enumerate() {
        for (j, &cb) in txt_centroids.iter().enumerate() {
            let d = tape.norm_sq_dist(ca, cb)?;
            if i == j {
                terms.push(d);
            } else {
                terms.push(tape.hinge(d, margin));
            }
        }
    }
    let loss = tape.sum(&terms)?;
    let grads = tape.backward(loss)?;
    Ok(ContrastiveOutput {
        loss: tape.value(loss).scalar_value()?,
        grad_recognition: collect_row_grads(&tape, &grads, &rec),
        grad_text: collect_row_grads(&tape, &grads, &txt),
        excluded_symbols,
    })
}
