//! Layers built from graph ops: dense, multi-head self-attention, batch norm,
//! and the sinusoidal positional embedding.

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{glorot_uniform, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Sinusoidal encoding `[t_steps x d]`: sin on even channels, cos on odd.
pub fn positional_embedding(t_steps: usize, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::OddWidth(d));
    }
    let mut data = vec![0.0; t_steps * d];
    for pos in 0..t_steps {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![t_steps, d], data)
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Dense { w, b }
    }

    /// `x . w + b` for `x: [batch x in]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }
}

/// Query/key/value projections, the output projection, and the head count.
/// Each projection is `[d x d]` with a bias; head `h` owns columns
/// `h*d/heads .. (h+1)*d/heads`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub out: Dense,
    pub heads: usize,
    pub d: usize,
}

impl AttentionWeights {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::ShapeMismatch(format!("width {d} is not divisible by {heads} heads")));
        }
        Ok(AttentionWeights {
            q: Dense::new(store, &format!("{name}.q"), d, d, rng),
            k: Dense::new(store, &format!("{name}.k"), d, d, rng),
            v: Dense::new(store, &format!("{name}.v"), d, d, rng),
            out: Dense::new(store, &format!("{name}.out"), d, d, rng),
            heads,
            d,
        })
    }

    /// Self-attention over `x: [batch * seq x d]`, rows batch-major.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, batch: usize, seq: usize) -> Result<NodeId> {
        let width = g.value(x).dims2()?.1;
        if width != self.d {
            return Err(Error::ShapeMismatch(format!("attention width {} applied to {width}", self.d)));
        }
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let a = g.attention(q, k, v, batch, seq, self.heads)?;
        self.out.forward(g, store, a)
    }
}

/// Batch norm affine params plus running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[features], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates: `running = 0.9 * running + 0.1 * batch` (biased variance).
    pub fn forward_train(&mut self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let (y, stats) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
        Ok(y)
    }

    pub fn forward_infer(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm_fixed(x, gamma, beta, &self.running_mean, &self.running_var, BN_EPS)
    }
}
