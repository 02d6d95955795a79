//! Tape of dense ops with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use std::borrow::Cow;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for row normalization; all-zero rows map to zero.
pub const NORM_FLOOR: f64 = 1e-12;

/// Probability floor inside the generalized cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax { x: NodeId, scale: f64 },
    RowNorm(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize, len: usize },
    SelectRow { x: NodeId, row: usize },
    Sum(NodeId),
    MeanRows(NodeId),
    CrossEntropy { logits: NodeId, target: usize },
    GeneralizedCe { logits: NodeId, target: usize, q: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::RowNorm(_) => "row_l2_normalize",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SelectRow { .. } => "select_row",
            Op::Sum(_) => "reduce_sum",
            Op::MeanRows(_) => "mean_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::GeneralizedCe { .. } => "generalized_ce",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Softmax { x, .. }
            | Op::RowNorm(x)
            | Op::Transpose(x)
            | Op::SliceCols { x, .. }
            | Op::SelectRow { x, .. }
            | Op::Sum(x)
            | Op::MeanRows(x)
            | Op::CrossEntropy { logits: x, .. }
            | Op::GeneralizedCe { logits: x, .. } => vec![*x],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    requires_grad: bool,
}

/// A recorded computation. Leaves may borrow their tensors (parameters) so
/// building a graph per episode does not copy the model.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    fn leaf(&mut self, value: Cow<'a, Tensor>, param: Option<usize>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf { param },
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), None, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), None, false)
    }

    /// Input whose gradient is wanted but which is not a model parameter.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), None, true)
    }

    /// Trainable parameter identified by `id` in the caller's parameter list.
    pub fn param(&mut self, id: usize, value: &'a Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), Some(id), true)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn dims(&self, id: NodeId) -> Result<(usize, usize)> {
        self.value(id).dims2()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} by {k2}x{n}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Add(a, b), Tensor::from_parts(shape, out))
    }

    /// Adds a single-row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, n) = self.dims(a)?;
        let (br, bc) = self.dims(bias)?;
        if br != 1 || bc != n {
            return Err(Error::shape("add_row", format!("bias {br}x{bc} for width {n}")));
        }
        let b = self.value(bias).data();
        let out = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::AddRow(a, bias), Tensor::from_parts(shape, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let shape = va.shape().to_vec();
        self.push(Op::Mul(a, b), Tensor::from_parts(shape, out))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(x);
        let out = v.data().iter().map(|a| a * factor).collect();
        let shape = v.shape().to_vec();
        self.push(Op::Scale(x, factor), Tensor::from_parts(shape, out))
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| f(a)).collect();
        let shape = v.shape().to_vec();
        self.push(op, Tensor::from_parts(shape, out))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu(x), x, |a| a.max(0.0))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid(x), x, kernels::sigmoid)
    }

    /// Row-wise softmax of `scale * x`.
    pub fn softmax(&mut self, x: NodeId, scale: f64) -> Result<NodeId> {
        if !scale.is_finite() {
            return Err(Error::NonFinite("softmax scale"));
        }
        let (m, n) = self.dims(x)?;
        if n == 0 {
            return Err(Error::shape("softmax", "empty row"));
        }
        let mut out = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks(n) {
            out.extend(kernels::softmax(row, scale));
        }
        let shape = self.value(x).shape().to_vec();
        self.push(Op::Softmax { x, scale }, Tensor::from_parts(shape, out))
    }

    /// Divides each row by `max(||row||, NORM_FLOOR)`.
    pub fn row_l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = self.dims(x)?;
        let mut out = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(n.max(1)) {
            let denom = kernels::norm(row).max(NORM_FLOOR);
            out.extend(row.iter().map(|a| a / denom));
        }
        let shape = self.value(x).shape().to_vec();
        self.push(Op::RowNorm(x), Tensor::from_parts(shape, out))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x)?;
        let out = kernels::transpose(self.value(x).data(), m, n);
        self.push(Op::Transpose(x), Tensor::from_parts(vec![n, m], out))
    }

    /// Concatenates along the last axis. All-vector inputs give a vector.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let rows = self.dims(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let all_vectors = parts.iter().all(|&p| self.value(p).shape().len() <= 1);
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(shape, out))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let cols = self.dims(parts[0])?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("widths {cols} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(vec![rows, cols], out))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(x)?;
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("{start}..{} of {n}", start + len)));
        }
        let data = self.value(x).data();
        let out = (0..m)
            .flat_map(|r| data[r * n + start..r * n + start + len].iter().copied())
            .collect();
        self.push(Op::SliceCols { x, start, len }, Tensor::from_parts(vec![m, len], out))
    }

    pub fn select_row(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        let (m, n) = self.dims(x)?;
        if row >= m {
            return Err(Error::shape("select_row", format!("row {row} of {m}")));
        }
        let out = self.value(x).row(row).to_vec();
        self.push(Op::SelectRow { x, row }, Tensor::from_parts(vec![1, n], out))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::from_parts(vec![1], vec![s]))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x)?;
        if m == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push(Op::MeanRows(x), Tensor::from_parts(vec![1, n], out))
    }

    fn check_logits(&self, logits: NodeId, target: usize, op: &'static str) -> Result<()> {
        let (m, n) = self.dims(logits)?;
        if m != 1 || target >= n {
            return Err(Error::shape(op, format!("target {target} for logits {m}x{n}")));
        }
        Ok(())
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        self.check_logits(logits, target, "cross_entropy")?;
        let loss = kernels::cross_entropy(self.value(logits).data(), target);
        self.push(
            Op::CrossEntropy { logits, target },
            Tensor::from_parts(vec![1], vec![loss]),
        )
    }

    /// `(1 - p^q) / q` with `p = softmax(logits)[target]` floored at `PROB_FLOOR`.
    pub fn generalized_ce(&mut self, logits: NodeId, target: usize, q: f64) -> Result<NodeId> {
        self.check_logits(logits, target, "generalized_ce")?;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Numeric(format!("gce exponent {q} outside (0, 1]")));
        }
        let p = kernels::softmax(self.value(logits).data(), 1.0)[target];
        let loss = kernels::gce(p, q);
        self.push(
            Op::GeneralizedCe { logits, target, q },
            Tensor::from_parts(vec![1], vec![loss]),
        )
    }

    /// Gradients of a scalar loss with respect to every node that depends on
    /// a gradient-carrying leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let seed = Tensor::from_parts(v.shape().to_vec(), vec![1.0]);
        self.backward_seeded(&[(loss, &seed)])
    }

    /// Reverse sweep starting from arbitrary upstream gradients.
    pub fn backward_seeded(&self, seeds: &[(NodeId, &Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for &(id, g) in seeds {
            if g.numel() != self.value(id).numel() {
                return Err(Error::shape(
                    "backward",
                    format!("seed {:?} for node {:?}", g.shape(), self.value(id).shape()),
                ));
            }
            accumulate(&mut grads[id.0], g.data());
            last = last.max(id.0);
        }
        for idx in (0..=last).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, NodeId(i))),
                _ => None,
            })
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let requires = self.nodes.iter().map(|n| n.requires_grad).collect();
        Ok(Gradients {
            grads,
            shapes,
            requires,
            params,
        })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.1;
                if self.wants(*a) {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    accumulate(&mut grads[a.0], &kernels::matmul(g, &bt, m, n, k));
                }
                if self.wants(*b) {
                    let at = kernels::transpose(self.value(*a).data(), m, k);
                    accumulate(&mut grads[b.0], &kernels::matmul(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.wants(*x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if self.wants(*bias) {
                    let n = self.dims(*bias)?.1;
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads[bias.0], &db);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                if self.wants(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads[b.0], &d);
                }
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                accumulate(&mut grads[x.0], &d);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[x.0], &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                accumulate(&mut grads[x.0], &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(&mut grads[x.0], &d);
            }
            Op::Softmax { x, scale } => {
                let n = self.dims(*x)?.1;
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    d.extend(gr.iter().zip(yr).map(|(gi, yi)| scale * yi * (gi - dot)));
                }
                accumulate(&mut grads[x.0], &d);
            }
            Op::RowNorm(x) => {
                let n = self.dims(*x)?.1.max(1);
                let xs = self.value(*x).data();
                let mut d = Vec::with_capacity(g.len());
                for ((gr, yr), xr) in g.chunks(n).zip(y.chunks(n)).zip(xs.chunks(n)) {
                    let norm = kernels::norm(xr);
                    if norm > NORM_FLOOR {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        d.extend(gr.iter().zip(yr).map(|(gi, yi)| (gi - yi * dot) / norm));
                    } else {
                        d.extend(gr.iter().map(|gi| gi / NORM_FLOOR));
                    }
                }
                accumulate(&mut grads[x.0], &d);
            }
            Op::Transpose(x) => {
                let (m, n) = self.dims(*x)?;
                accumulate(&mut grads[x.0], &kernels::transpose(g, n, m));
            }
            Op::ConcatCols(parts) => {
                let rows = self.dims(parts[0])?.0;
                let total: usize = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p)?.1;
                    if self.wants(*p) {
                        let d: Vec<f64> = (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        accumulate(&mut grads[p.0], &d);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = self.dims(*x)?;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                accumulate(&mut grads[x.0], &d);
            }
            Op::SelectRow { x, row } => {
                let (m, n) = self.dims(*x)?;
                let mut d = vec![0.0; m * n];
                d[row * n..(row + 1) * n].copy_from_slice(g);
                accumulate(&mut grads[x.0], &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                accumulate(&mut grads[x.0], &d);
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims(*x)?;
                let d: Vec<f64> = (0..m * n).map(|i| g[i % n] / m as f64).collect();
                accumulate(&mut grads[x.0], &d);
            }
            Op::CrossEntropy { logits, target } => {
                let mut p = kernels::softmax(self.value(*logits).data(), 1.0);
                p[*target] -= 1.0;
                p.iter_mut().for_each(|v| *v *= g[0]);
                accumulate(&mut grads[logits.0], &p);
            }
            Op::GeneralizedCe { logits, target, q } => {
                let s = kernels::softmax(self.value(*logits).data(), 1.0);
                let pt = s[*target];
                let d: Vec<f64> = if pt < PROB_FLOOR {
                    vec![0.0; s.len()]
                } else {
                    // dL/dz_j = -p^q (delta_tj - s_j)
                    let coef = -pt.powf(*q) * g[0];
                    s.iter()
                        .enumerate()
                        .map(|(j, sj)| coef * (if j == *target { 1.0 } else { 0.0 } - sj))
                        .collect()
                };
                accumulate(&mut grads[logits.0], &d);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
    params: Vec<(usize, NodeId)>,
}

impl Gradients {
    /// Gradient at `node`. Nodes outside the differentiable path are an
    /// error; nodes on it that the loss does not reach get zeros.
    pub fn wrt(&self, node: NodeId) -> Result<Tensor> {
        if !self.requires[node.0] {
            return Err(Error::Detached(node.0));
        }
        let shape = self.shapes[node.0].clone();
        Ok(match &self.grads[node.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    /// Adds each parameter leaf's gradient into `sink[param_id]`.
    pub fn accumulate_params(&self, sink: &mut [Tensor]) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node.0] {
                sink[pid]
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
}

/// Slice kernels shared by forward and backward rules.
pub mod kernels {
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        out
    }

    pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        out
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    pub fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Softmax of `scale * x` with max subtraction.
    pub fn softmax(x: &[f64], scale: f64) -> Vec<f64> {
        let max = x.iter().map(|v| v * scale).fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = x.iter().map(|v| (v * scale - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= total);
        e
    }

    pub fn log_sum_exp(x: &[f64]) -> f64 {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
        log_sum_exp(logits) - logits[target]
    }

    pub fn gce(p: f64, q: f64) -> f64 {
        (1.0 - p.max(super::PROB_FLOOR).powf(q)) / q
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(x: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in x.iter().enumerate().skip(1) {
            if *v > x[best] {
                best = i;
            }
        }
        best
    }
}
