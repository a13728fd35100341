//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Each operation appends a node whose inputs already exist, so node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//! Parameters are borrowed into the tape, so building a graph does not copy
//! the (large) embedding tables.

use std::borrow::Cow;

use super::tensor::{dot, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Gather { table: NodeId, ids: Vec<u32> },
    MeanRows(NodeId),
    ConcatRows(Vec<NodeId>),
    Stack(Vec<NodeId>),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Tanh(NodeId),
    Dot(NodeId, NodeId),
    Mse(NodeId, NodeId),
    SoftmaxNll { scores: NodeId, positive: usize },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Select { src: NodeId, indices: Vec<usize> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// ∂loss/∂node, or zeros when the node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    /// Moves the adjoint out instead of cloning it.
    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> NodeId {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Trainable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(Cow::Owned(t), true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> NodeId {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(invalid!("unknown node {}", id.0))
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::Invariant(format!("non-finite value produced by {op:?}")));
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Rows `ids` of a rank-2 table.
    pub fn gather(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        self.check(table)?;
        let t = self.value(table);
        let (rows, cols) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(invalid!("gather index {} out of range for {} rows", id, rows));
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), cols, out)?;
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Column means of an m×n matrix, m ≥ 1, giving a length-n vector.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let (m, n) = self.value(a).dims2()?;
        if m == 0 {
            return Err(shape_err!("mean over zero rows"));
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(&av[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        let mf = m as f64;
        out.iter_mut().for_each(|o| *o /= mf);
        self.push(Tensor::vector(out), Op::MeanRows(a), &[a])
    }

    /// Stacks vectors (or matrices) with equal column count into one matrix.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err!("concat of zero parts"));
        }
        let mut cols = None;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            self.check(p)?;
            let v = self.value(p);
            let (r, c) = match v.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                s => return Err(shape_err!("cannot concat shape {:?}", s)),
            };
            if *cols.get_or_insert(c) != c {
                return Err(shape_err!("concat column mismatch {} vs {}", cols.unwrap(), c));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols.unwrap_or(0), data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            self.check(s)?;
            let v = self.value(s);
            if !v.is_scalar() {
                return Err(shape_err!("stack expects scalars, got {:?}", v.shape()));
            }
            out.push(v.data()[0]);
        }
        self.push(Tensor::vector(out), Op::Stack(scalars.to_vec()), scalars)
    }

    /// `a · b` with `a` of shape [m,k] or [k] and `b` of shape [k,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (m, k, vec_out) = lhs_dims(self.value(a))?;
        let (kb, n) = self.value(b).dims2()?;
        if k != kb {
            return Err(shape_err!("matmul inner dims {} vs {}", k, kb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                for (o, &bpj) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        let value = if vec_out {
            Tensor::vector(out)
        } else {
            Tensor::matrix(m, n, out)?
        };
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` with `a` of shape [m,k] or [k] and `b` of shape [n,k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (m, k, vec_out) = lhs_dims(self.value(a))?;
        let (n, kb) = self.value(b).dims2()?;
        if k != kb {
            return Err(shape_err!("matmul_nt inner dims {} vs {}", k, kb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]);
            }
        }
        let value = if vec_out {
            Tensor::vector(out)
        } else {
            Tensor::matrix(m, n, out)?
        };
        self.push(value, Op::MatMulNt(a, b), &[a, b])
    }

    /// Adds a length-n bias to a vector or to every row of an m×n matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(bias)?;
        let bv = self.value(bias);
        let n = match bv.shape() {
            [n] => *n,
            s => return Err(shape_err!("bias must be a vector, got {:?}", s)),
        };
        let av = self.value(a);
        let cols = *av.shape().last().unwrap_or(&0);
        if av.rank() == 0 || av.rank() > 2 || cols != n {
            return Err(shape_err!("add_bias {:?} + [{}]", av.shape(), n));
        }
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        same_shape(self.value(a), self.value(b), "dot")?;
        let v = dot(self.value(a).data(), self.value(b).data());
        self.push(Tensor::scalar(v), Op::Dot(a, b), &[a, b])
    }

    /// Mean squared error over all components.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        same_shape(self.value(a), self.value(b), "mse")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if av.is_empty() {
            return Err(shape_err!("mse of empty tensors"));
        }
        let mut s = 0.0;
        for (x, y) in av.iter().zip(bv) {
            let d = x - y;
            s += d * d;
        }
        let v = s / av.len() as f64;
        self.push(Tensor::scalar(v), Op::Mse(a, b), &[a, b])
    }

    /// Negative log-likelihood of `positive` under a softmax over `scores`.
    pub fn softmax_nll(&mut self, scores: NodeId, positive: usize) -> Result<NodeId> {
        self.check(scores)?;
        let s = self.value(scores);
        if s.rank() != 1 {
            return Err(shape_err!("softmax_nll expects a vector, got {:?}", s.shape()));
        }
        let v = softmax_nll(s.data(), positive)?;
        self.push(Tensor::scalar(v), Op::SoftmaxNll { scores, positive }, &[scores])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Picks entries by flat (row-major) index into a vector.
    pub fn select(&mut self, src: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.check(src)?;
        let sv = self.value(src).data();
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push(
                *sv.get(i)
                    .ok_or_else(|| invalid!("select index {} out of range {}", i, sv.len()))?,
            );
        }
        self.push(
            Tensor::vector(out),
            Op::Select {
                src,
                indices: indices.to_vec(),
            },
            &[src],
        )
    }

    /// Sums scalars; a convenience over repeated [`Tape::add`].
    pub fn sum(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = scalars.split_first().ok_or_else(|| shape_err!("sum of zero terms"))?;
        let mut acc = first;
        for &s in rest {
            acc = self.add(acc, s)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(shape_err!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            ));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g_owned) = adj[idx].take() else {
                continue;
            };
            let g = g_owned.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let cols = tv.shape()[1];
                    let acc = self.adjoint(&mut adj, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut acc.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += s;
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (m, ncols) = self.value(*a).dims2()?;
                    let inv = 1.0 / m as f64;
                    let acc = self.adjoint(&mut adj, *a);
                    for r in 0..m {
                        let dst = &mut acc.data_mut()[r * ncols..(r + 1) * ncols];
                        for (d, s) in dst.iter_mut().zip(g) {
                            *d += s * inv;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let acc = self.adjoint(&mut adj, p);
                        for (d, s) in acc.data_mut().iter_mut().zip(&g[off..off + len]) {
                            *d += s;
                        }
                        off += len;
                    }
                }
                Op::Stack(parts) => {
                    for (k, &p) in parts.iter().enumerate() {
                        let acc = self.adjoint(&mut adj, p);
                        acc.data_mut()[0] += g[k];
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k, _) = lhs_dims(self.value(*a))?;
                    let (_, ncols) = self.value(*b).dims2()?;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.nodes[a.0].needs_grad {
                        // g·bᵀ as row updates over a transposed copy of b, so the
                        // inner loop is contiguous.
                        let mut bt = vec![0.0; ncols * k];
                        for p in 0..k {
                            for j in 0..ncols {
                                bt[j * k + p] = bv[p * ncols + j];
                            }
                        }
                        let acc = self.adjoint(&mut adj, *a);
                        let ad = acc.data_mut();
                        for i in 0..m {
                            let arow = &mut ad[i * k..(i + 1) * k];
                            for j in 0..ncols {
                                let gij = g[i * ncols + j];
                                for (d, s) in arow.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                                    *d += gij * s;
                                }
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let acc = self.adjoint(&mut adj, *b);
                        let bd = acc.data_mut();
                        for i in 0..m {
                            let grow = &g[i * ncols..(i + 1) * ncols];
                            for p in 0..k {
                                let aip = av[i * k + p];
                                for (d, s) in bd[p * ncols..(p + 1) * ncols].iter_mut().zip(grow) {
                                    *d += aip * s;
                                }
                            }
                        }
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (m, k, _) = lhs_dims(self.value(*a))?;
                    let (ncols, _) = self.value(*b).dims2()?;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.nodes[a.0].needs_grad {
                        let acc = self.adjoint(&mut adj, *a);
                        let ad = acc.data_mut();
                        for i in 0..m {
                            for j in 0..ncols {
                                let gij = g[i * ncols + j];
                                for (d, s) in ad[i * k..(i + 1) * k].iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                    *d += gij * s;
                                }
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let acc = self.adjoint(&mut adj, *b);
                        let bd = acc.data_mut();
                        for i in 0..m {
                            for j in 0..ncols {
                                let gij = g[i * ncols + j];
                                for (d, s) in bd[j * k..(j + 1) * k].iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                    *d += gij * s;
                                }
                            }
                        }
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.nodes[a.0].needs_grad {
                        let acc = self.adjoint(&mut adj, *a);
                        for (d, s) in acc.data_mut().iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                    if self.nodes[bias.0].needs_grad {
                        let acc = self.adjoint(&mut adj, *bias);
                        let nb = acc.len();
                        for chunk in g.chunks(nb) {
                            for (d, s) in acc.data_mut().iter_mut().zip(chunk) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let acc = self.adjoint(&mut adj, *a);
                    for ((d, s), yv) in acc.data_mut().iter_mut().zip(g).zip(y) {
                        *d += s * (1.0 - yv * yv);
                    }
                }
                Op::Dot(a, b) => {
                    let gs = g[0];
                    for (x, other) in [(*a, *b), (*b, *a)] {
                        if self.nodes[x.0].needs_grad {
                            let ov = self.value(other).data();
                            let acc = self.adjoint(&mut adj, x);
                            for (d, o) in acc.data_mut().iter_mut().zip(ov) {
                                *d += gs * o;
                            }
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let c = 2.0 * g[0] / av.len() as f64;
                    for (x, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if self.nodes[x.0].needs_grad {
                            let acc = self.adjoint(&mut adj, x);
                            for ((d, p), q) in acc.data_mut().iter_mut().zip(av).zip(bv) {
                                *d += sign * c * (p - q);
                            }
                        }
                    }
                }
                Op::SoftmaxNll { scores, positive } => {
                    let sv = self.value(*scores).data();
                    let probs = softmax(sv);
                    let acc = self.adjoint(&mut adj, *scores);
                    for (i, (d, p)) in acc.data_mut().iter_mut().zip(&probs).enumerate() {
                        let target = if i == *positive { 1.0 } else { 0.0 };
                        *d += g[0] * (p - target);
                    }
                }
                Op::Add(a, b) => {
                    for x in [*a, *b] {
                        if self.nodes[x.0].needs_grad {
                            let acc = self.adjoint(&mut adj, x);
                            for (d, s) in acc.data_mut().iter_mut().zip(g) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let acc = self.adjoint(&mut adj, *a);
                    for (d, s) in acc.data_mut().iter_mut().zip(g) {
                        *d += c * s;
                    }
                }
                Op::Select { src, indices } => {
                    let acc = self.adjoint(&mut adj, *src);
                    for (k, &i) in indices.iter().enumerate() {
                        acc.data_mut()[i] += g[k];
                    }
                }
            }
            adj[idx] = Some(g_owned);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        adj.resize(self.nodes.len(), None);
        Ok(Gradients { grads: adj, shapes })
    }

    fn adjoint<'s>(&self, adj: &'s mut [Option<Tensor>], id: NodeId) -> &'s mut Tensor {
        adj[id.0].get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()))
    }
}

fn lhs_dims(a: &Tensor) -> Result<(usize, usize, bool)> {
    match a.shape() {
        [k] => Ok((1, *k, true)),
        [m, k] => Ok((*m, *k, false)),
        s => Err(shape_err!("matmul lhs must be rank 1 or 2, got {:?}", s)),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{}: {:?} vs {:?}", what, a.shape(), b.shape()));
    }
    Ok(())
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `-log softmax(scores)[positive]` via a max-shifted log-sum-exp.
pub fn softmax_nll(scores: &[f64], positive: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(invalid!("softmax_nll over zero scores"));
    }
    if positive >= scores.len() {
        return Err(invalid!(
            "positive index {} out of range for {} scores",
            positive,
            scores.len()
        ));
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
    Ok(m + z.ln() - scores[positive])
}
