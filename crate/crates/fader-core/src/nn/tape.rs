//! Reverse-mode differentiation over a recorded computation.
//!
//! A `Tape` records primitive applications during the forward pass into a
//! linear list of nodes, then replays them in reverse to accumulate exact
//! gradients. Every node is produced by exactly one primitive (leaves by
//! none), the record is acyclic by construction, and replay order is fixed,
//! so gradients are bit-reproducible.
//!
//! Primitives operate on whole matrices; a batch forward is a handful of
//! nodes rather than one graph per sample. Loss primitives reduce to a
//! `[1, 1]` scalar and average over elements or batch rows, keeping loss
//! scales independent of dimension and batch size.

use crate::error::{Error, Result};
use crate::nn::linalg;
use crate::nn::params::ParameterSet;
use crate::nn::tensor::Tensor;
use crate::par;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// y = x w^T + b, with w: [out, in], b: [1, out], x: [n, in]
    Affine { w: ValueId, b: ValueId, x: ValueId },
    Tanh { x: ValueId },
    Sigmoid { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: f64 },
    Sum { xs: Vec<ValueId> },
    ConcatCols { a: ValueId, b: ValueId },
    /// Each row divided by its L2 norm.
    RowNormalize { x: ValueId },
    /// Squared Euclidean distance between the L2-normalized rows a and b.
    NormSqDist { a: ValueId, b: ValueId },
    /// Elementwise max(margin - x, 0).
    Hinge { x: ValueId, margin: f64 },
    /// Mean over elements of |a - b|.
    MeanAbsErr { a: ValueId, b: ValueId },
    /// Mean over rows of the stable binary cross-entropy from logits.
    BceFromLogit { logits: ValueId, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `id`, or zeros if the node does not influence the loss.
    pub fn get(&self, id: ValueId, tape: &Tape) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; tape.value(id).len()],
        }
    }

    /// Collect gradients for named parameters bound via [`Tape::bind`].
    pub fn to_parameter_set(&self, tape: &Tape, binding: &[(String, ValueId)]) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, id) in binding {
            let t = tape.value(*id);
            let g = self.get(*id, tape);
            out.insert(name, Tensor::new(t.rows(), t.cols(), g).expect("gradient matches node shape"))
                .expect("binding names unique");
        }
        out
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable binary cross-entropy from a logit:
/// `max(l, 0) - l t + ln(1 + exp(-|l|))`. Finite for any finite logit.
pub fn bce_from_logit_scalar(logit: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Domain(format!("bce target {target} outside [0, 1]")));
    }
    Ok(logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p())
}

/// Stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean absolute error between equal-shaped slices.
pub fn mean_abs_err_scalar(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "mae operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Record an input value (parameter snapshot or data).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Register every entry of a parameter set as a leaf, returning the
    /// name-to-node binding in insertion order.
    pub fn bind(&mut self, params: &ParameterSet) -> Vec<(String, ValueId)> {
        params
            .iter()
            .map(|(name, t)| (name.to_string(), self.leaf(t.clone())))
            .collect()
    }

    /// Look up a bound parameter node by name.
    pub fn bound(binding: &[(String, ValueId)], name: &str) -> ValueId {
        binding
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    /// y = x w^T + b with w: [out, in], b: [1, out], x: [n, in].
    pub fn affine(&mut self, w: ValueId, b: ValueId, x: ValueId) -> Result<ValueId> {
        let (wt, bt, xt) = (self.value(w), self.value(b), self.value(x));
        let (out_dim, in_dim) = wt.shape();
        if bt.shape() != (1, out_dim) {
            return Err(Error::Dimension(format!(
                "affine bias shape {:?} does not match weight rows {}",
                bt.shape(),
                out_dim
            )));
        }
        if xt.cols() != in_dim {
            return Err(Error::Dimension(format!(
                "affine input width {} does not match weight columns {}",
                xt.cols(),
                in_dim
            )));
        }
        let n = xt.rows();
        let mut data = vec![0.0; n * out_dim];
        linalg::matmul_nt(xt.as_slice(), wt.as_slice(), n, in_dim, out_dim, &mut data);
        let bias = bt.as_slice();
        par::for_each_row(&mut data, out_dim, |_, row| {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        });
        Ok(self.push(Tensor::new(n, out_dim, data)?, Op::Affine { w, b, x }))
    }

    pub fn activation(&mut self, kind: Activation, x: ValueId) -> ValueId {
        match kind {
            Activation::Tanh => self.tanh(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let xt = self.value(x);
        let data: Vec<f64> = xt.as_slice().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(xt.rows(), xt.cols(), data).expect("same shape");
        self.push(t, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let xt = self.value(x);
        let data: Vec<f64> = xt.as_slice().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(xt.rows(), xt.cols(), data).expect("same shape");
        self.push(t, Op::Sigmoid { x })
    }

    fn check_same_shape(&self, a: ValueId, b: ValueId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what} operands have shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "add")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data: Vec<f64> = at.as_slice().iter().zip(bt.as_slice()).map(|(x, y)| x + y).collect();
        Ok(self.push(Tensor::new(at.rows(), at.cols(), data)?, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "mul")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data: Vec<f64> = at.as_slice().iter().zip(bt.as_slice()).map(|(x, y)| x * y).collect();
        Ok(self.push(Tensor::new(at.rows(), at.cols(), data)?, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let xt = self.value(x);
        let data: Vec<f64> = xt.as_slice().iter().map(|v| v * c).collect();
        let t = Tensor::new(xt.rows(), xt.cols(), data).expect("same shape");
        self.push(t, Op::Scale { x, c })
    }

    /// Elementwise sum of one or more same-shaped values.
    pub fn sum(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Dimension("sum of zero values".into()))?;
        for &x in &xs[1..] {
            self.check_same_shape(first, x, "sum")?;
        }
        let shape = self.value(first).shape();
        let mut data = self.value(first).as_slice().to_vec();
        for &x in &xs[1..] {
            for (o, v) in data.iter_mut().zip(self.value(x).as_slice()) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::new(shape.0, shape.1, data)?, Op::Sum { xs: xs.to_vec() }))
    }

    /// [n, ca] ++ [n, cb] -> [n, ca + cb]
    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows() != bt.rows() {
            return Err(Error::Dimension(format!(
                "concat operands have {} and {} rows",
                at.rows(),
                bt.rows()
            )));
        }
        let (n, ca, cb) = (at.rows(), at.cols(), bt.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(at.row(r));
            data.extend_from_slice(bt.row(r));
        }
        Ok(self.push(Tensor::new(n, ca + cb, data)?, Op::ConcatCols { a, b }))
    }

    /// Divide each row by its L2 norm. A zero-norm row is a hard error.
    pub fn row_normalize(&mut self, x: ValueId) -> Result<ValueId> {
        let xt = self.value(x);
        let (n, d) = xt.shape();
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = xt.row(r);
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::Domain(format!("cannot normalize zero-norm row {r}")));
            }
            data.extend(row.iter().map(|v| v / norm));
        }
        Ok(self.push(Tensor::new(n, d, data)?, Op::RowNormalize { x }))
    }

    /// Squared Euclidean distance between the L2-normalized single rows of
    /// `a` and `b`. Zero-norm inputs are a hard error.
    pub fn norm_sq_dist(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows() != 1 || bt.rows() != 1 || at.cols() != bt.cols() {
            return Err(Error::Dimension(format!(
                "norm_sq_dist expects two equal-width single rows, found {:?} and {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (na, nb) = (l2_norm(at.as_slice()), l2_norm(bt.as_slice()));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Domain("cannot normalize zero-norm row".into()));
        }
        let d: f64 = at
            .as_slice()
            .iter()
            .zip(bt.as_slice())
            .map(|(x, y)| {
                let diff = x / na - y / nb;
                diff * diff
            })
            .sum();
        Ok(self.push(Tensor::scalar(d), Op::NormSqDist { a, b }))
    }

    /// Elementwise max(margin - x, 0).
    pub fn hinge(&mut self, x: ValueId, margin: f64) -> ValueId {
        let xt = self.value(x);
        let data: Vec<f64> = xt.as_slice().iter().map(|v| (margin - v).max(0.0)).collect();
        let t = Tensor::new(xt.rows(), xt.cols(), data).expect("same shape");
        self.push(t, Op::Hinge { x, margin })
    }

    /// Mean over components of |a - b|; scalar output.
    pub fn mean_abs_err(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape(a, b, "mae")?;
        let v = mean_abs_err_scalar(self.value(a).as_slice(), self.value(b).as_slice())?;
        Ok(self.push(Tensor::scalar(v), Op::MeanAbsErr { a, b }))
    }

    /// Mean over batch rows of the stable binary cross-entropy between
    /// `logits` ([n, 1]) and constant `targets` (length n, each in [0, 1]).
    pub fn bce_from_logit(&mut self, logits: ValueId, targets: &[f64]) -> Result<ValueId> {
        let lt = self.value(logits);
        if lt.cols() != 1 || lt.rows() != targets.len() {
            return Err(Error::Dimension(format!(
                "bce expects logits [n, 1] with n targets; found {:?} and {} targets",
                lt.shape(),
                targets.len()
            )));
        }
        let mut total = 0.0;
        for (l, t) in lt.as_slice().iter().zip(targets) {
            total += bce_from_logit_scalar(*l, *t)?;
        }
        let v = total / targets.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::BceFromLogit { logits, targets: targets.to_vec() }))
    }

    /// Reverse-mode gradients of a scalar output with respect to every node.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward requires a scalar loss, found {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.accumulate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, node: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut add_to = |id: ValueId, contrib: Vec<f64>| {
            let slot = &mut grads[id.0];
            match slot {
                Some(g) => {
                    for (a, b) in g.iter_mut().zip(&contrib) {
                        *a += b;
                    }
                }
                None => *slot = Some(contrib),
            }
        };

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Affine { w, b, x } => {
                let (wt, xt) = (self.value(*w), self.value(*x));
                let (out_dim, in_dim) = wt.shape();
                let n = xt.rows();
                // dW = dy^T x
                let mut dw = vec![0.0; out_dim * in_dim];
                linalg::matmul_tn(dy, xt.as_slice(), n, out_dim, in_dim, &mut dw);
                add_to(*w, dw);
                // db = column sums of dy
                add_to(*b, linalg::column_sums(dy, n, out_dim));
                // dx = dy w
                let mut dx = vec![0.0; n * in_dim];
                linalg::matmul_nn(dy, wt.as_slice(), n, out_dim, in_dim, &mut dx);
                add_to(*x, dx);
            }
            Op::Tanh { x } => {
                let y = self.nodes[node].value.as_slice();
                let dx: Vec<f64> = dy.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
                add_to(*x, dx);
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[node].value.as_slice();
                let dx: Vec<f64> = dy.iter().zip(y).map(|(g, v)| g * v * (1.0 - v)).collect();
                add_to(*x, dx);
            }
            Op::Add { a, b } => {
                add_to(*a, dy.to_vec());
                add_to(*b, dy.to_vec());
            }
            Op::Mul { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = dy.iter().zip(bt.as_slice()).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = dy.iter().zip(at.as_slice()).map(|(g, v)| g * v).collect();
                add_to(*a, da);
                add_to(*b, db);
            }
            Op::Scale { x, c } => {
                add_to(*x, dy.iter().map(|g| g * c).collect());
            }
            Op::Sum { xs } => {
                for &x in xs {
                    add_to(x, dy.to_vec());
                }
            }
            Op::ConcatCols { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, ca, cb) = (at.rows(), at.cols(), bt.cols());
                let mut da = vec![0.0; n * ca];
                let mut db = vec![0.0; n * cb];
                for r in 0..n {
                    let src = &dy[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da[r * ca..(r + 1) * ca].copy_from_slice(&src[..ca]);
                    db[r * cb..(r + 1) * cb].copy_from_slice(&src[ca..]);
                }
                add_to(*a, da);
                add_to(*b, db);
            }
            Op::RowNormalize { x } => {
                // y = x / ||x||; dx = (dy - (dy . y) y) / ||x||, per row
                let xt = self.value(*x);
                let y = self.nodes[node].value.as_slice();
                let (n, d) = xt.shape();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let xr = xt.row(r);
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &dy[r * d..(r + 1) * d];
                    let norm = l2_norm(xr);
                    let dot: f64 = gr.iter().zip(yr).map(|(g, v)| g * v).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - dot * yr[j]) / norm;
                    }
                }
                add_to(*x, dx);
            }
            Op::NormSqDist { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let up = dy[0];
                let (na, nb) = (l2_norm(at.as_slice()), l2_norm(bt.as_slice()));
                let d = at.cols();
                let u: Vec<f64> = at.as_slice().iter().map(|v| v / na).collect();
                let v: Vec<f64> = bt.as_slice().iter().map(|w| w / nb).collect();
                // ds/du = 2(u - v); chain through each normalization
                let mut da = vec![0.0; d];
                let mut db = vec![0.0; d];
                let gu: Vec<f64> = u.iter().zip(&v).map(|(x, y)| 2.0 * up * (x - y)).collect();
                let dot_u: f64 = gu.iter().zip(&u).map(|(g, x)| g * x).sum();
                let dot_v: f64 = gu.iter().zip(&v).map(|(g, y)| g * y).sum();
                for j in 0..d {
                    da[j] = (gu[j] - dot_u * u[j]) / na;
                    db[j] = (-gu[j] + dot_v * v[j]) / nb;
                }
                add_to(*a, da);
                add_to(*b, db);
            }
            Op::Hinge { x, margin } => {
                let xt = self.value(*x);
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(xt.as_slice())
                    .map(|(g, v)| if *margin - v > 0.0 { -g } else { 0.0 })
                    .collect();
                add_to(*x, dx);
            }
            Op::MeanAbsErr { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let up = dy[0];
                let n = at.len() as f64;
                let da: Vec<f64> = at
                    .as_slice()
                    .iter()
                    .zip(bt.as_slice())
                    .map(|(x, y)| up * sign(x - y) / n)
                    .collect();
                let db: Vec<f64> = da.iter().map(|v| -v).collect();
                add_to(*a, da);
                add_to(*b, db);
            }
            Op::BceFromLogit { logits, targets } => {
                let lt = self.value(*logits);
                let up = dy[0];
                let n = targets.len() as f64;
                let dl: Vec<f64> = lt
                    .as_slice()
                    .iter()
                    .zip(targets)
                    .map(|(l, t)| up * (sigmoid(*l) - t) / n)
                    .collect();
                add_to(*logits, dl);
            }
        }
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::SeedTree;

    fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn affine_identity_case() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::row_vector(vec![0.0, 0.0]));
        let x = tape.leaf(Tensor::row_vector(vec![3.0, -1.0]));
        let y = tape.affine(w, b, x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn affine_zero_weights_return_bias() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 2));
        let b = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::row_vector(vec![0.3, -0.7]));
        let y = tape.affine(w, b, x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_matches_triple_loop_oracle() {
        let mut rng = SeedTree::new(5).rng();
        let w = random_tensor(&mut rng, 4, 3);
        let b = random_tensor(&mut rng, 1, 4);
        let x = random_tensor(&mut rng, 1, 3);

        let mut tape = Tape::new();
        let (wi, bi, xi) = (tape.leaf(w.clone()), tape.leaf(b.clone()), tape.leaf(x.clone()));
        let y = tape.affine(wi, bi, xi).unwrap();

        for o in 0..4 {
            let mut acc = b.get(0, o);
            for i in 0..3 {
                acc += w.get(o, i) * x.get(0, i);
            }
            assert!((tape.value(y).get(0, o) - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::row_vector(vec![0.0, 0.0]));
        let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(tape.affine(w, b, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn activations_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![0.0]));
        let t = tape.activation(Activation::Tanh, x);
        let s = tape.activation(Activation::Sigmoid, x);
        assert_eq!(tape.value(t).get(0, 0), 0.0);
        assert_eq!(tape.value(s).get(0, 0), 0.5);
    }

    #[test]
    fn tanh_matches_exp_formula_oracle() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![0.7]));
        let y = tape.tanh(x);
        // (e^x - e^-x) / (e^x + e^-x), evaluated directly
        let e = 0.7f64.exp();
        let en = (-0.7f64).exp();
        let expect = (e - en) / (e + en);
        assert!((tape.value(y).get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_from_logit_scalar(0.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let saturated = bce_from_logit_scalar(30.0, 1.0).unwrap();
        assert!(saturated >= 0.0 && saturated < 1e-9);
        // ln(1 + e^{0.5}) evaluated independently
        assert!((bce_from_logit_scalar(0.5, 0.0).unwrap() - 0.974076984).abs() < 1e-9);
    }

    #[test]
    fn bce_target_outside_unit_interval_rejected() {
        assert!(matches!(bce_from_logit_scalar(0.0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(bce_from_logit_scalar(0.0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn bce_finite_and_nonnegative_for_extreme_logits() {
        let mut rng = SeedTree::new(9).rng();
        for _ in 0..200 {
            let l = rng.random_range(-700.0..700.0);
            let t = rng.random_range(0.0..=1.0);
            let v = bce_from_logit_scalar(l, t).unwrap();
            assert!(v.is_finite() && v >= 0.0, "bce({l}, {t}) = {v}");
        }
        assert!(bce_from_logit_scalar(1e308, 1.0).unwrap().is_finite());
        assert!(bce_from_logit_scalar(-1e308, 0.0).unwrap().is_finite());
    }

    #[test]
    fn mae_examples() {
        let a = [1.0, 1.0];
        assert_eq!(mean_abs_err_scalar(&a, &a).unwrap(), 0.0);
        assert_eq!(mean_abs_err_scalar(&a, &[0.0, 3.0]).unwrap(), 1.5);

        let mut rng = SeedTree::new(13).rng();
        let x: Vec<f64> = (0..128).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..128).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..128 {
            acc += (x[i] - y[i]).abs();
        }
        assert!((mean_abs_err_scalar(&x, &y).unwrap() - acc / 128.0).abs() < 1e-12);
    }

    #[test]
    fn backward_square_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x, &tape), vec![6.0]);
    }

    #[test]
    fn backward_mae_signs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![2.0, -2.0]));
        let zero = tape.leaf(Tensor::row_vector(vec![0.0, 0.0]));
        let loss = tape.mean_abs_err(x, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x, &tape), vec![0.5, -0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_norm_row_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(tape.row_normalize(x), Err(Error::Domain(_))));
        let a = tape.leaf(Tensor::row_vector(vec![0.0, 0.0]));
        let b = tape.leaf(Tensor::row_vector(vec![1.0, 0.0]));
        assert!(matches!(tape.norm_sq_dist(a, b), Err(Error::Domain(_))));
    }

    /// Central finite differences over every leaf of a rebuilt graph.
    /// `build` must be a pure function of the leaf values.
    pub(crate) fn finite_difference_check<F>(leaves: &[Tensor], build: F, step: f64, rel_tol: f64)
    where
        F: Fn(&mut Tape, &[ValueId]) -> ValueId,
    {
        let eval = |values: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<ValueId> = values.iter().map(|t| tape.leaf(t.clone())).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).scalar_value().unwrap()
        };

        let mut tape = Tape::new();
        let ids: Vec<ValueId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();

        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(ids[li], &tape);
            for j in 0..leaf.len() {
                let mut plus = leaves.to_vec();
                let mut minus = leaves.to_vec();
                plus[li].data_mut()[j] += step;
                minus[li].data_mut()[j] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let denom = analytic[j].abs().max(numeric.abs()).max(1.0);
                assert!(
                    (analytic[j] - numeric).abs() / denom < rel_tol,
                    "leaf {li} component {j}: analytic {} vs numeric {}",
                    analytic[j],
                    numeric
                );
            }
        }
    }

    #[test]
    fn two_layer_tanh_mlp_matches_finite_differences() {
        let mut rng = SeedTree::new(21).rng();
        let leaves = vec![
            random_tensor(&mut rng, 4, 3),  // w1
            random_tensor(&mut rng, 1, 4),  // b1
            random_tensor(&mut rng, 2, 4),  // w2
            random_tensor(&mut rng, 1, 2),  // b2
            random_tensor(&mut rng, 3, 3),  // x (batch of 3)
            random_tensor(&mut rng, 3, 2),  // target
        ];
        finite_difference_check(
            &leaves,
            |tape, ids| {
                let h = tape.affine(ids[0], ids[1], ids[4]).unwrap();
                let h = tape.tanh(h);
                let y = tape.affine(ids[2], ids[3], h).unwrap();
                let y = tape.tanh(y);
                tape.mean_abs_err(y, ids[5]).unwrap()
            },
            1e-5,
            1e-4,
        );
    }

    #[test]
    fn contrastive_primitives_match_finite_differences() {
        let mut rng = SeedTree::new(22).rng();
        let leaves = vec![random_tensor(&mut rng, 1, 4), random_tensor(&mut rng, 1, 4)];
        finite_difference_check(
            &leaves,
            |tape, ids| {
                let d = tape.norm_sq_dist(ids[0], ids[1]).unwrap();
                let h = tape.hinge(d, 1.0);
                tape.sum(&[d, h]).unwrap()
            },
            1e-6,
            1e-4,
        );
    }

    #[test]
    fn batched_bce_matches_finite_differences() {
        let mut rng = SeedTree::new(23).rng();
        let leaves = vec![
            random_tensor(&mut rng, 1, 3), // w
            random_tensor(&mut rng, 1, 1), // b
            random_tensor(&mut rng, 5, 3), // x
        ];
        finite_difference_check(
            &leaves,
            |tape, ids| {
                let logits = tape.affine(ids[0], ids[1], ids[2]).unwrap();
                tape.bce_from_logit(logits, &[1.0, 0.0, 0.3, 0.9, 0.5]).unwrap()
            },
            1e-5,
            1e-4,
        );
    }

    #[test]
    fn concat_and_scale_backward() {
        let mut rng = SeedTree::new(24).rng();
        let leaves = vec![
            random_tensor(&mut rng, 2, 3),
            random_tensor(&mut rng, 2, 1),
            random_tensor(&mut rng, 2, 4),
        ];
        finite_difference_check(
            &leaves,
            |tape, ids| {
                let cat = tape.concat_cols(ids[0], ids[1]).unwrap();
                let diff = tape.scale(cat, 0.7);
                tape.mean_abs_err(diff, ids[2]).unwrap()
            },
            1e-5,
            1e-4,
        );
    }
}
