//! Tape of forward operations with a reverse sweep for gradients.
//!
//! Every op records its output value and whatever it needs for the backward
//! pass. Nodes are appended in evaluation order, so the reverse sweep simply
//! walks the tape backwards. Reductions always run in index order, which keeps
//! both passes bit-deterministic.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Tanh(NodeId),
    Reshape(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        /// softmax weights, `[batch, heads, seq, seq]`
        probs: Vec<f64>,
    },
    /// Normalization with per-feature `scale = 1 / sqrt(var + eps)`;
    /// `batch_stats` is true when mean/var came from the rows themselves.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        scale: Vec<f64>,
        batch_stats: bool,
    },
    Mse {
        pred: NodeId,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-feature batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar w.r.t. every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; gradients are still reported for it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// `[m x k] . [k x n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// Adds a `[n]` bias to every row of `[m x n]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).shape() != [n] {
            return Err(shape_err("add_bias", self.value(x).shape(), self.value(b).shape()));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err("add", self.value(a).shape(), self.value(b).shape()));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x.tanh()).collect()).expect("same shape");
        self.push(out, Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Scaled dot-product attention over `heads` column blocks.
    ///
    /// `q`, `k`, `v` are `[batch * seq, d]` with rows ordered batch-major.
    /// Per head: `softmax(Q K^T / sqrt(d / heads)) V`; heads are concatenated
    /// back into `[batch * seq, d]`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let (rows, d) = self.value(q).dims2()?;
        for other in [k, v] {
            if self.value(other).shape() != [rows, d] {
                return Err(shape_err("attention", self.value(q).shape(), self.value(other).shape()));
            }
        }
        if rows != batch * seq || heads == 0 || d % heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "attention: {rows} rows for batch {batch} x seq {seq}, width {d} with {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        *p = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    let max = prow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for p in prow.iter_mut() {
                        *p = (*p - max).exp();
                        total += *p;
                    }
                    for p in prow.iter_mut() {
                        *p /= total;
                    }
                    let orow = &mut out[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::Attention { q, k, v, batch, seq, heads, probs },
        ))
    }

    /// Softmax weights of an attention node, `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, node: NodeId) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Training-mode batch norm over the rows of `[m x f]`.
    pub fn batch_norm_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<(NodeId, BatchStats)> {
        let (m, f) = self.value(x).dims2()?;
        if m < 2 {
            return Err(Error::BatchTooSmall(m));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; f];
        for row in xd.chunks_exact(f) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0; f];
        for row in xd.chunks_exact(f) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|a| *a /= m as f64);
        let id = self.normalize(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((id, BatchStats { mean, var }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        self.normalize(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<NodeId> {
        let (m, f) = self.value(x).dims2()?;
        for (node, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(node).shape() != [f] {
                return Err(shape_err(what, self.value(x).shape(), self.value(node).shape()));
            }
        }
        if mean.len() != f || var.len() != f {
            return Err(Error::ShapeMismatch(format!("batch norm stats for {} features, input has {f}", mean.len())));
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = self.value(x).data().to_vec();
        let mut out = vec![0.0; m * f];
        for (xrow, orow) in xhat.chunks_exact_mut(f).zip(out.chunks_exact_mut(f)) {
            for j in 0..f {
                xrow[j] = (xrow[j] - mean[j]) * scale[j];
                orow[j] = g[j] * xrow[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![m, f], out)?,
            Op::BatchNorm { x, gamma, beta, xhat, scale, batch_stats },
        ))
    }

    /// Mean squared error against a constant target; yields a 1-element node.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        if self.value(pred).shape() != target.shape() {
            return Err(shape_err("mse", self.value(pred).shape(), target.shape()));
        }
        let loss = mse_value(self.value(pred).data(), target.data());
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.data().to_vec() }))
    }

    /// Reverse sweep from a scalar node.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::GraphNotRecorded(format!("node {} not on a tape of {} nodes", loss.0, self.nodes.len())));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::GraphNotRecorded(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    /// Runs the reverse sweep and adds each parameter's gradient into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(pid), Some(g)) = (&node.op, &grads.grads[idx]) {
                let p = store.get_mut(*pid);
                for (a, d) in p.grad.data_mut().iter_mut().zip(g) {
                    *a += d;
                }
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                let da = matmul_a_bt(dy, self.value(*b).data(), m, n, k);
                let db = matmul_at_b(self.value(*a).data(), dy, m, k, n);
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for row in dy.chunks_exact(n) {
                    for (a, d) in db.iter_mut().zip(row) {
                        *a += d;
                    }
                }
                accumulate(grads, *x, dy);
                accumulate(grads, *b, &db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, dy);
                accumulate(grads, *b, dy);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = node.value.data().iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Reshape(x) => accumulate(grads, *x, dy),
            Op::Attention { q, k, v, batch, seq, heads, probs } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *batch, *seq, *heads, probs, dy);
                accumulate(grads, *q, &dq);
                accumulate(grads, *k, &dk);
                accumulate(grads, *v, &dv);
            }
            Op::BatchNorm { x, gamma, beta, xhat, scale, batch_stats } => {
                let f = scale.len();
                let m = xhat.len() / f;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for (drow, xrow) in dy.chunks_exact(f).zip(xhat.chunks_exact(f)) {
                    for j in 0..f {
                        dgamma[j] += drow[j] * xrow[j];
                        dbeta[j] += drow[j];
                    }
                }
                let mut dx = vec![0.0; m * f];
                for ((dxrow, drow), xrow) in dx.chunks_exact_mut(f).zip(dy.chunks_exact(f)).zip(xhat.chunks_exact(f)) {
                    for j in 0..f {
                        dxrow[j] = if *batch_stats {
                            g[j] * scale[j] / m as f64 * (m as f64 * drow[j] - dbeta[j] - xrow[j] * dgamma[j])
                        } else {
                            g[j] * scale[j] * drow[j]
                        };
                    }
                }
                accumulate(grads, *x, &dx);
                accumulate(grads, *gamma, &dgamma);
                accumulate(grads, *beta, &dbeta);
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let dx: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| dy[0] * 2.0 * (p - t) / n)
                    .collect();
                accumulate(grads, *pred, &dx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: &[f64],
        dy: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.value(q).shape()[1];
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                let pbase = (b * heads + h) * seq * seq;
                let at = |i: usize| (b * seq + i) * d + col;
                for i in 0..seq {
                    let prow = &probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let dyi = &dy[at(i)..at(i) + dh];
                    for j in 0..seq {
                        let vj = &vd[at(j)..at(j) + dh];
                        dp[j] = dyi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let dvj = &mut dv[at(j)..at(j) + dh];
                        for (a, x) in dvj.iter_mut().zip(dyi) {
                            *a += prow[j] * x;
                        }
                    }
                    let dot: f64 = prow.iter().zip(&dp).map(|(p, g)| p * g).sum();
                    for j in 0..seq {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[at(i) + c] += ds * kd[at(j) + c];
                            dk[at(j) + c] += ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

pub fn mse_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}
