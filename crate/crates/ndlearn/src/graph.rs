//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients for every parameter leaf. Graphs are cheap to build
//! and are discarded after each step.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Lower/upper clamp applied to probabilities fed into [`Graph::bce`].
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec { w: NodeId, x: NodeId },
    LinearRows { x: NodeId, w: NodeId },
    AddBiasRows { x: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Row { x: NodeId, index: usize },
    StackRows(Vec<NodeId>),
    Unfold { x: NodeId, width: usize },
    MaxRows { x: NodeId, argmax: Vec<usize> },
    SelectMean { x: NodeId, indices: Vec<usize> },
    Sum(NodeId),
    Softmax(NodeId),
    CrossEntropy { logits: NodeId, target: usize },
    Bce { p: NodeId, label: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn is_vector(t: &Tensor) -> bool {
    t.shape().len() == 1
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// The leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).clone(),
        });
        let node = NodeId(self.nodes.len() - 1);
        self.params.insert(id, node);
        node
    }

    /// `w · x` for `w: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if !is_matrix(wv) || !is_vector(xv) || wv.cols() != xv.len() {
            return Err(shape_err("matvec", wv.shape(), xv.shape()));
        }
        let n = wv.cols();
        let out: Vec<f64> = (0..wv.rows())
            .map(|i| {
                wv.data()[i * n..(i + 1) * n]
                    .iter()
                    .zip(xv.data())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(Op::MatVec { w, x }, Tensor::vector(out), "matvec")
    }

    /// `x · wᵀ` for `x: [t, n]`, `w: [m, n]`, giving `[t, m]`.
    pub fn linear_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if !is_matrix(xv) || !is_matrix(wv) || xv.cols() != wv.cols() {
            return Err(shape_err("linear_rows", wv.shape(), xv.shape()));
        }
        let (t, n, m) = (xv.rows(), xv.cols(), wv.rows());
        let mut out = vec![0.0; t * m];
        for r in 0..t {
            let xr = &xv.data()[r * n..(r + 1) * n];
            for i in 0..m {
                let wr = &wv.data()[i * n..(i + 1) * n];
                out[r * m + i] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        let value = Tensor::matrix(t, m, out)?;
        self.push(Op::LinearRows { x, w }, value, "linear_rows")
    }

    /// Adds `b: [m]` to every row of `x: [t, m]`.
    pub fn add_bias_rows(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        if !is_matrix(xv) || !is_vector(bv) || xv.cols() != bv.len() {
            return Err(shape_err("add_bias_rows", xv.shape(), bv.shape()));
        }
        let m = bv.len();
        let mut value = xv.clone();
        value
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += bv.data()[i % m]);
        self.push(Op::AddBiasRows { x, b }, value, "add_bias_rows")
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av.shape(), bv.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Add(a, b), value, "add")
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = *items.first().ok_or(Error::Empty("add_n"))?;
        let mut value = self.value(first).clone();
        for &id in &items[1..] {
            value.add_assign(self.value(id))?;
        }
        self.push(Op::AddN(items.to_vec()), value, "add_n")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Mul(a, b), value, "mul")
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value, "scale")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value, "sigmoid")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value, "relu")
    }

    /// Flattening concatenation into a vector.
    pub fn concat(&mut self, items: &[NodeId]) -> Result<NodeId> {
        if items.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let data: Vec<f64> = items
            .iter()
            .flat_map(|&id| self.value(id).data().iter().copied())
            .collect();
        self.push(Op::Concat(items.to_vec()), Tensor::vector(data), "concat")
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if !is_matrix(xv) || index >= xv.rows() {
            return Err(Error::InvalidArgument(format!(
                "row {index} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let value = Tensor::vector(xv.row(index).to_vec());
        self.push(Op::Row { x, index }, value, "row")
    }

    /// Stacks equally sized vectors into a `[k, m]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows.first().ok_or(Error::Empty("stack_rows"))?;
        let m = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            let rv = self.value(r);
            if !is_vector(rv) || rv.len() != m {
                return Err(shape_err("stack_rows", &[m], rv.shape()));
            }
            data.extend_from_slice(rv.data());
        }
        let value = Tensor::matrix(rows.len(), m, data)?;
        self.push(Op::StackRows(rows.to_vec()), value, "stack_rows")
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row. Inputs shorter than `width` are padded with zero rows at
    /// the end, so the output always has at least one row.
    pub fn unfold(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if !is_matrix(xv) || width == 0 {
            return Err(shape_err("unfold", &[width], xv.shape()));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let positions = t.max(width) - width + 1;
        let mut data = vec![0.0; positions * width * d];
        for p in 0..positions {
            for k in 0..width {
                if p + k < t {
                    let dst = p * width * d + k * d;
                    data[dst..dst + d].copy_from_slice(xv.row(p + k));
                }
            }
        }
        let value = Tensor::matrix(positions, width * d, data)?;
        self.push(Op::Unfold { x, width }, value, "unfold")
    }

    /// Column-wise maximum over the rows of a matrix. Ties go to the first row.
    pub fn max_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if !is_matrix(xv) {
            return Err(shape_err("max_rows", &[0, 0], xv.shape()));
        }
        let (t, m) = (xv.rows(), xv.cols());
        let mut argmax = vec![0usize; m];
        let mut out = xv.row(0).to_vec();
        for r in 1..t {
            for (i, &v) in xv.row(r).iter().enumerate() {
                if v > out[i] {
                    out[i] = v;
                    argmax[i] = r;
                }
            }
        }
        self.push(Op::MaxRows { x, argmax }, Tensor::vector(out), "max_rows")
    }

    /// Mean of the selected components of a vector, as a scalar.
    pub fn select_mean(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if indices.is_empty() {
            return Err(Error::Empty("select_mean"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for length {}",
                xv.len()
            )));
        }
        let mean = indices.iter().map(|&i| xv.data()[i]).sum::<f64>() / indices.len() as f64;
        self.push(
            Op::SelectMean {
                x,
                indices: indices.to_vec(),
            },
            Tensor::scalar(mean),
            "select_mean",
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), "sum")
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::vector(softmax(self.value(x).data()));
        self.push(Op::Softmax(x), value, "softmax")
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if !is_vector(lv) || target >= lv.len() {
            return Err(Error::InvalidArgument(format!(
                "target class {target} out of range for logits {:?}",
                lv.shape()
            )));
        }
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - lv.data()[target];
        self.push(
            Op::CrossEntropy { logits, target },
            Tensor::scalar(loss),
            "cross_entropy",
        )
    }

    /// Binary cross-entropy of a scalar probability against `label`, with the
    /// probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, p: NodeId, label: f64) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.len() != 1 {
            return Err(shape_err("bce", &[1], pv.shape()));
        }
        let loss = bce_value(pv.item(), label);
        self.push(Op::Bce { p, label }, Tensor::scalar(loss), "bce")
    }

    /// Reverse-mode pass from a scalar `loss` node. Parameters that do not
    /// influence the loss get zero gradients.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward(loss.0, self.nodes.len()));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", &[1], self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = store.zero_grads();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    let slot = out.get_mut(*pid);
                    if slot.len() != g.len() {
                        return Err(shape_err("backward", slot.shape(), &[g.len()]));
                    }
                    slot.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::MatVec { w, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let n = wv.cols();
                    let gw = acc(&mut grads, *w, wv.len());
                    for (i, gi) in g.iter().enumerate() {
                        for (j, xj) in xv.data().iter().enumerate() {
                            gw[i * n + j] += gi * xj;
                        }
                    }
                    let gx = acc(&mut grads, *x, n);
                    for (i, gi) in g.iter().enumerate() {
                        for (j, gxj) in gx.iter_mut().enumerate() {
                            *gxj += wv.data()[i * n + j] * gi;
                        }
                    }
                }
                Op::LinearRows { x, w } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (t, n, m) = (xv.rows(), xv.cols(), wv.rows());
                    let gx = acc(&mut grads, *x, t * n);
                    for r in 0..t {
                        for i in 0..m {
                            let gri = g[r * m + i];
                            if gri == 0.0 {
                                continue;
                            }
                            let wr = &wv.data()[i * n..(i + 1) * n];
                            gx[r * n..(r + 1) * n]
                                .iter_mut()
                                .zip(wr)
                                .for_each(|(a, b)| *a += gri * b);
                        }
                    }
                    let gw = acc(&mut grads, *w, m * n);
                    for r in 0..t {
                        let xr = &xv.data()[r * n..(r + 1) * n];
                        for i in 0..m {
                            let gri = g[r * m + i];
                            if gri == 0.0 {
                                continue;
                            }
                            gw[i * n..(i + 1) * n]
                                .iter_mut()
                                .zip(xr)
                                .for_each(|(a, b)| *a += gri * b);
                        }
                    }
                }
                Op::AddBiasRows { x, b } => {
                    let m = self.value(*b).len();
                    add_into(acc(&mut grads, *x, g.len()), &g);
                    let gb = acc(&mut grads, *b, m);
                    g.iter().enumerate().for_each(|(i, v)| gb[i % m] += v);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::AddN(items) => {
                    for &id in items {
                        add_into(acc(&mut grads, id, g.len()), &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv.data()[i];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av.data()[i];
                    }
                }
                Op::Scale(a, f) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += f * y);
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), s) in ga.iter_mut().zip(&g).zip(node.value.data()) {
                        *x += y * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), t) in ga.iter_mut().zip(&g).zip(node.value.data()) {
                        *x += y * (1.0 - t * t);
                    }
                }
                Op::Relu(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), out) in ga.iter_mut().zip(&g).zip(node.value.data()) {
                        if *out > 0.0 {
                            *x += y;
                        }
                    }
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for &id in items {
                        let n = self.value(id).len();
                        add_into(acc(&mut grads, id, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Row { x, index } => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let gx = acc(&mut grads, *x, xv.len());
                    add_into(&mut gx[index * m..(index + 1) * m], &g);
                }
                Op::StackRows(rows) => {
                    let m = node.value.cols();
                    for (r, &id) in rows.iter().enumerate() {
                        add_into(acc(&mut grads, id, m), &g[r * m..(r + 1) * m]);
                    }
                }
                Op::Unfold { x, width } => {
                    let xv = self.value(*x);
                    let (t, d) = (xv.rows(), xv.cols());
                    let positions = node.value.rows();
                    let gx = acc(&mut grads, *x, t * d);
                    for p in 0..positions {
                        for k in 0..*width {
                            if p + k < t {
                                let src = p * width * d + k * d;
                                add_into(&mut gx[(p + k) * d..(p + k + 1) * d], &g[src..src + d]);
                            }
                        }
                    }
                }
                Op::MaxRows { x, argmax } => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let gx = acc(&mut grads, *x, xv.len());
                    for (i, &r) in argmax.iter().enumerate() {
                        gx[r * m + i] += g[i];
                    }
                }
                Op::SelectMean { x, indices } => {
                    let n = self.value(*x).len();
                    let share = g[0] / indices.len() as f64;
                    let gx = acc(&mut grads, *x, n);
                    indices.iter().for_each(|&i| gx[i] += share);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, y.len());
                    for i in 0..y.len() {
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let probs = softmax(self.value(*logits).data());
                    let gl = acc(&mut grads, *logits, probs.len());
                    for (i, p) in probs.iter().enumerate() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        gl[i] += g[0] * (p - onehot);
                    }
                }
                Op::Bce { p, label } => {
                    let pv = self.value(*p).item();
                    let gp = acc(&mut grads, *p, 1);
                    gp[0] += g[0] * bce_grad(pv, *label);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped away from 0 and 1.
pub fn bce_value(p: f64, label: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Derivative of [`bce_value`] in `p`; zero where the clamp is active.
pub fn bce_grad(p: f64, label: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -label / p + (1.0 - label) / (1.0 - p)
}
