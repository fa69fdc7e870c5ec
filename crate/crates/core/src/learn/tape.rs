//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! value; [`Tape::backward`] walks the record in reverse accumulating
//! adjoints. Parameters enter through [`Tape::param`] and their gradients are
//! read back with [`Gradients::param_grads`].

use std::collections::HashMap;

use super::tensor::{matmul, matmul_nt, matmul_tn};
use super::{ParamId, ParameterStore, Tensor};
use crate::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Logits are clamped to this magnitude before the sigmoid in the BCE loss.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<Option<usize>>),
    GroupDot {
        q: Var,
        k: Var,
        group: usize,
        scale: f64,
    },
    MaskedSoftmax(Var, Vec<usize>),
    GroupWeightedSum {
        w: Var,
        v: Var,
    },
    BceWithLogits(Var, Vec<f64>),
    SumAll(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints of every recorded value with respect to one scalar.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter of `store`, zero for parameters the loss
    /// does not reach.
    pub fn param_grads(&self, tape: &Tape, store: &ParameterStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, value)| {
                tape.params
                    .get(&id)
                    .and_then(|v| self.get(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(value.rows(), value.cols()))
            })
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records parameter `id` once per tape and returns its handle.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| f(*p, *q))
            .collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_vec(x.rows(), x.cols(), x.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x c` bias to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width mismatch");
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (o, bv) in value.row_slice_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddRow(a, bias), rg)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.map(a, |v| scale * v + shift);
        let rg = self.rg(a);
        self.push(value, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::cos);
        let rg = self.rg(a);
        self.push(value, Op::Cos(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let out = value.row_slice_mut(r);
            let mut off = 0;
            for p in parts {
                let t = &self.nodes[p.0].value;
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                out[off..off + t.cols()].copy_from_slice(t.row_slice(r));
                off += t.cols();
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.cols(), "slice out of range");
        let mut value = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            value
                .row_slice_mut(r)
                .copy_from_slice(&x.row_slice(r)[start..end]);
        }
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, end), rg)
    }

    /// Row `r` of the result is row `index[r]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Var {
        let x = self.value(a);
        let mut value = Tensor::zeros(index.len(), x.cols());
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = src {
                value.row_slice_mut(r).copy_from_slice(x.row_slice(*s));
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, index), rg)
    }

    /// Scaled grouped dot product: `out[b, j] = scale * q[b] . k[b * group + j]`.
    pub fn group_dot(&mut self, q: Var, k: Var, group: usize, scale: f64) -> Var {
        let (qv, kv) = (self.value(q), self.value(k));
        let b = qv.rows();
        assert_eq!(kv.rows(), b * group, "group_dot key rows");
        assert_eq!(kv.cols(), qv.cols(), "group_dot width");
        let mut value = Tensor::zeros(b, group);
        for i in 0..b {
            let qr = qv.row_slice(i);
            for j in 0..group {
                let kr = kv.row_slice(i * group + j);
                let dot: f64 = qr.iter().zip(kr).map(|(x, y)| x * y).sum();
                value.row_slice_mut(i)[j] = scale * dot;
            }
        }
        let rg = self.rg(q) || self.rg(k);
        self.push(value, Op::GroupDot { q, k, group, scale }, rg)
    }

    /// Row-wise softmax over the first `counts[r]` entries; the rest are zero.
    pub fn masked_softmax(&mut self, a: Var, counts: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(counts.len(), x.rows(), "one count per row");
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for (r, &n) in counts.iter().enumerate() {
            assert!(n <= x.cols(), "count exceeds row width");
            if n == 0 {
                continue;
            }
            let row = &x.row_slice(r)[..n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut value.row_slice_mut(r)[..n];
            let mut total = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::MaskedSoftmax(a, counts), rg)
    }

    /// `out[b] = sum_j w[b, j] * v[b * group + j]` with `group = w.cols()`.
    pub fn group_weighted_sum(&mut self, w: Var, v: Var) -> Var {
        let (wv, vv) = (self.value(w), self.value(v));
        let (b, group) = wv.shape();
        assert_eq!(vv.rows(), b * group, "group_weighted_sum value rows");
        let mut value = Tensor::zeros(b, vv.cols());
        for i in 0..b {
            for j in 0..group {
                let wij = wv.get(i, j);
                if wij == 0.0 {
                    continue;
                }
                let src = vv.row_slice(i * group + j);
                for (o, s) in value.row_slice_mut(i).iter_mut().zip(src) {
                    *o += wij * s;
                }
            }
        }
        let rg = self.rg(w) || self.rg(v);
        self.push(value, Op::GroupWeightedSum { w, v }, rg)
    }

    /// Mean binary cross-entropy of `sigmoid(clamp(logits))` against `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), labels.len(), "one label per logit");
        let n = labels.len().max(1) as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(&labels)
            .map(|(&zi, &y)| {
                let zc = zi.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                softplus(zc) - y * zc
            })
            .sum();
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits(logits, labels),
            rg,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::SumAll(a), rg)
    }

    /// Reverse accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped =
            |like: &Tensor, data: Vec<f64>| Tensor::from_vec(like.rows(), like.cols(), data);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, shaped(g, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                    self.accumulate(grads, *a, shaped(g, d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                    self.accumulate(grads, *b, shaped(g, d));
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in db.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Affine(a, scale) => {
                self.accumulate(
                    grads,
                    *a,
                    shaped(g, g.data().iter().map(|v| scale * v).collect()),
                );
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *a, shaped(g, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *a, shaped(g, d));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, shaped(g, d));
            }
            Op::Cos(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| -gv * xv.sin())
                    .collect();
                self.accumulate(grads, *a, shaped(g, d));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.rg(*p) {
                        let mut d = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_slice_mut(r)
                                .copy_from_slice(&g.row_slice(r)[off..off + w]);
                        }
                        self.accumulate(grads, *p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let cols = g.cols();
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.rg(*p) {
                        let data = g.data()[off * cols..(off + h) * cols].to_vec();
                        self.accumulate(grads, *p, Tensor::from_vec(h, cols, data));
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    d.row_slice_mut(r)[*start..*end].copy_from_slice(g.row_slice(r));
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (r, src) in index.iter().enumerate() {
                    if let Some(s) = src {
                        for (o, v) in d.row_slice_mut(*s).iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::GroupDot { q, k, group, scale } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let mut dq = Tensor::zeros(qv.rows(), qv.cols());
                let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                for i in 0..qv.rows() {
                    for j in 0..*group {
                        let gij = scale * g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        let row = i * group + j;
                        for (o, kx) in dq.row_slice_mut(i).iter_mut().zip(kv.row_slice(row)) {
                            *o += gij * kx;
                        }
                        for (o, qx) in dk.row_slice_mut(row).iter_mut().zip(qv.row_slice(i)) {
                            *o += gij * qx;
                        }
                    }
                }
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
            }
            Op::MaskedSoftmax(a, counts) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for (r, &n) in counts.iter().enumerate() {
                    let y = &out.row_slice(r)[..n];
                    let gr = &g.row_slice(r)[..n];
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, yv), gv) in d.row_slice_mut(r)[..n].iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::GroupWeightedSum { w, v } => {
                let (wv, vv) = (self.value(*w), self.value(*v));
                let group = wv.cols();
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(wv.rows(), group);
                    for i in 0..wv.rows() {
                        for j in 0..group {
                            let dot: f64 = g
                                .row_slice(i)
                                .iter()
                                .zip(vv.row_slice(i * group + j))
                                .map(|(p, q)| p * q)
                                .sum();
                            dw.row_slice_mut(i)[j] = dot;
                        }
                    }
                    self.accumulate(grads, *w, dw);
                }
                if self.rg(*v) {
                    let mut dv = Tensor::zeros(vv.rows(), vv.cols());
                    for i in 0..wv.rows() {
                        for j in 0..group {
                            let wij = wv.get(i, j);
                            for (o, gv) in dv
                                .row_slice_mut(i * group + j)
                                .iter_mut()
                                .zip(g.row_slice(i))
                            {
                                *o = wij * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *v, dv);
                }
            }
            Op::BceWithLogits(logits, labels) => {
                let z = self.value(*logits);
                let scale = g.item() / labels.len().max(1) as f64;
                let d = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zi, &y)| {
                        if zi.abs() <= LOGIT_CLAMP {
                            scale * (sigmoid(zi) - y)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *logits, shaped(z, d));
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, shaped(x, vec![g.item(); x.len()]));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
