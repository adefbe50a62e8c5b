//! Reverse-mode differentiation over a recorded graph of matrix operations.
//!
//! A [`Graph`] is built once per forward pass. Every operation appends a
//! node holding its value; [`Graph::backward`] walks the nodes in reverse
//! and accumulates parameter gradients into a [`ParamTape`]. Leaves created
//! with [`Graph::constant`] receive no gradient.

use std::collections::HashMap;
use std::sync::Arc;

use super::{softmax_rows, Mask, ParamId, ParamTape, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    OuterSum(Var, Var),
    /// Slope and the entries whose branch matters (all when `None`).
    LeakyRelu(Var, f64, Option<Arc<Mask>>),
    Tanh(Var),
    Softmax(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Mean(Vec<Var>),
    Reshape(Var),
    NormalizeRows(Var, Vec<f64>),
    SoftmaxCrossEntropy(Var, Vec<usize>, Tensor2),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParamTape, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n×1) and `b` (m×1).
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != 1 || tb.cols() != 1 {
            return Err(Error::Shape(format!(
                "outer_sum needs column vectors, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut value = Tensor2::zeros(ta.rows(), tb.rows());
        for i in 0..ta.rows() {
            for j in 0..tb.rows() {
                value.set(i, j, ta.get(i, 0) + tb.get(j, 0));
            }
        }
        Ok(self.push(value, Op::OuterSum(a, b)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = super::leaky_relu(self.value(a), slope);
        self.push(value, Op::LeakyRelu(a, slope, None))
    }

    /// Same values as [`Graph::leaky_relu`]; only entries inside `support`
    /// contribute to [`Graph::branch_fingerprint`]. For inputs that are later
    /// masked out anyway.
    pub fn leaky_relu_on(&mut self, a: Var, slope: f64, support: &Arc<Mask>) -> Result<Var> {
        let x = self.value(a);
        if support.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "support mask {:?} does not match {:?}",
                support.shape(),
                x.shape()
            )));
        }
        let value = super::leaky_relu(x, slope);
        Ok(self.push(value, Op::LeakyRelu(a, slope, Some(Arc::clone(support)))))
    }

    /// Hash of the branch taken by every piecewise-linear entry recorded so
    /// far. Two evaluations with equal fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _, support) = &node.op {
                let x = self.value(*a);
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        if support.as_ref().is_none_or(|m| m.get(r, c)) {
                            (x.get(r, c) > 0.0).hash(&mut h);
                        }
                    }
                }
            }
        }
        h.finish()
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Row softmax; masked entries are zero and pass no gradient.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let value = softmax_rows(self.value(a), mask.map(|m| m.as_ref()))?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_rows(start, end)?;
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor2::concat_rows(&tensors)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Elementwise mean of equally shaped nodes.
    ///
    /// Each entry is summed in sorted order, so the result does not depend
    /// on the order of `parts`.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("mean of no tensors".into()));
        };
        let shape = self.value(first).shape();
        for &p in parts {
            self.value(p).expect_shape(shape)?;
        }
        let n = parts.len() as f64;
        let mut value = Tensor2::zeros(shape.0, shape.1);
        let mut column = Vec::with_capacity(parts.len());
        for k in 0..value.len() {
            column.clear();
            column.extend(parts.iter().map(|&p| self.value(p).data()[k]));
            column.sort_by(f64::total_cmp);
            value.data_mut()[k] = column.iter().sum::<f64>() / n;
        }
        Ok(self.push(value, Op::Mean(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(rows, cols)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let norms: Vec<f64> = x.iter_rows().map(super::l2_norm).collect();
        let value = x.normalize_rows()?;
        Ok(self.push(value, Op::NormalizeRows(a, norms)))
    }

    /// Mean over rows of `-log softmax(logits)[row][target]`, as a 1×1 node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != targets.len() || x.rows() == 0 {
            return Err(Error::Shape(format!(
                "cross entropy over {} rows with {} targets",
                x.rows(),
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= x.cols()) {
            return Err(Error::InvalidArgument(format!(
                "target {t} out of range for {} classes",
                x.cols()
            )));
        }
        let probs = softmax_rows(x, None)?;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            // log-sum-exp form keeps tiny probabilities accurate
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let value = Tensor2::scalar(total / targets.len() as f64);
        Ok(self.push(value, Op::SoftmaxCrossEntropy(logits, targets.to_vec(), probs)))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor2::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Accumulates d`loss`/d`param` into `params` for every parameter leaf.
    ///
    /// Gradients are added to what the tape already holds; call
    /// [`ParamTape::zero_grads`] first for a fresh batch.
    pub fn backward(&self, loss: Var, params: &mut ParamTape) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("an empty graph (no forward pass recorded)".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Backward(format!("unknown node {}", loss.0)));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Backward(format!(
                "a non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }

        let mut adj: Vec<Option<Tensor2>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let (r, c) = params.value(*id).shape();
                    if (r, c) != g.shape() {
                        return Err(Error::Shape(format!(
                            "parameter `{}` changed shape during recording",
                            params.name(*id)
                        )));
                    }
                    params.grad_mut(*id).add_assign(&g)?;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |d, y| d * y)?;
                    let gb = g.zip_map(self.value(*a), |d, x| d * x)?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.scale(*c))?,
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose())?,
                Op::OuterSum(a, b) => {
                    let (n, m) = g.shape();
                    let mut ga = Tensor2::zeros(n, 1);
                    let mut gb = Tensor2::zeros(m, 1);
                    for i in 0..n {
                        for j in 0..m {
                            let d = g.get(i, j);
                            ga.data_mut()[i] += d;
                            gb.data_mut()[j] += d;
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::LeakyRelu(a, slope, _) => {
                    // subgradient at exactly zero uses the negative slope
                    let ga = g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { slope * d })?;
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |d, y| d * (1.0 - y * y))?;
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                        for (o, (p, d)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = p * (d - inner);
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor2::zeros(src.rows(), src.cols());
                    let off = start * src.cols();
                    ga.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        accumulate(&mut adj, p, g.slice_rows(row, row + r)?)?;
                        row += r;
                    }
                }
                Op::Mean(parts) => {
                    let share = g.scale(1.0 / parts.len() as f64);
                    for &p in parts {
                        accumulate(&mut adj, p, share.clone())?;
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, g.reshape(r, c)?)?;
                }
                Op::NormalizeRows(a, norms) => {
                    let y = &node.value;
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for (i, norm) in norms.iter().enumerate() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                        for (o, (p, d)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = (d - p * inner) / norm;
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::SoftmaxCrossEntropy(a, targets, probs) => {
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut ga = probs.scale(scale);
                    for (i, &t) in targets.iter().enumerate() {
                        let cur = ga.get(i, t);
                        ga.set(i, t, cur - scale);
                    }
                    accumulate(&mut adj, *a, ga)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Tensor2::filled(r, c, g.get(0, 0)))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor2>], v: Var, g: Tensor2) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut params = ParamTape::new();
        let w = params.register("w", Tensor2::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let _ = g.param(&params, w);
        let c = g.constant(Tensor2::scalar(7.0));
        let loss = g.sum(c);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(w).data(), &[0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut params = ParamTape::new();
        let w = params.register("w", Tensor2::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&params, w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq);
        assert_eq!(g.value(loss).get(0, 0), 9.0);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(w).data(), &[6.0]);
    }

    #[test]
    fn backward_on_empty_graph_errors() {
        let mut params = ParamTape::new();
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0), &mut params), Err(Error::Backward(_))));
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut params = ParamTape::new();
        let mut g = Graph::new();
        let c = g.constant(Tensor2::zeros(2, 2));
        assert!(g.backward(c, &mut params).is_err());
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut params = ParamTape::new();
        let w = params.register("w", Tensor2::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        assert_eq!(g.param(&params, w), g.param(&params, w));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor2::from_rows(&[[12.5, 0.0, 0.0]]).unwrap());
        let loss = g.softmax_cross_entropy(logits, &[0]).unwrap();
        let expected = -(12.5f64.exp() / (12.5f64.exp() + 2.0)).ln();
        assert!((g.value(loss).get(0, 0) - expected).abs() < 1e-15);
    }
}
