//! Shared oracles for the integration tests: finite-difference gradient
//! checking, a brute-force attention reference and naive metric loops.

#![allow(dead_code)]

use gwindcast::model::Model;
use gwindcast::neural::{Graph, NodeId, Tensor};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradient norms below this are compared absolutely: central differences
/// carry ~1e-11 of rounding noise, so a gradient that is zero by symmetry
/// (e.g. the key bias under softmax) has no meaningful relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Norm-wise relative error `|a - b| / max(|a|, |b|, GRAD_FLOOR)` over whole
/// gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    diff / scale.max(GRAD_FLOOR)
}

fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Analytic (reverse sweep) and central-difference gradients of the scalar
/// built by `build` with respect to each input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], build: F) -> Vec<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).data()[0]
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.gradients(loss).unwrap();

    let mut out = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).map_or_else(|| vec![0.0; inputs[i].len()], <[f64]>::to_vec);
        let mut work = inputs.to_vec();
        let numeric = (0..inputs[i].len())
            .map(|j| {
                let x0 = inputs[i].data()[j];
                central_difference(
                    |x| {
                        work[i].data_mut()[j] = x;
                        let v = eval(&work);
                        work[i].data_mut()[j] = x0;
                        v
                    },
                    x0,
                    FD_STEP,
                )
            })
            .collect();
        out.push((analytic, numeric));
    }
    out
}

fn train_loss(model: &Model, x: &Array3<f64>, y: &Tensor) -> f64 {
    let mut m = model.clone();
    let mut g = Graph::new();
    let (_, out) = m.forward_train(&mut g, x).unwrap();
    let loss = g.mse(out, y).unwrap();
    g.value(loss).data()[0]
}

/// Parameter gradients of the training-mode MSE: analytic from the reverse
/// sweep and central differences, one pair per parameter tensor. At most
/// `per_param` entries of each tensor are probed (evenly strided).
pub fn check_model_params(model: &Model, x: &Array3<f64>, y: &Array2<f64>, per_param: usize) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let target = Tensor::from_array2(y);
    let mut m = model.clone();
    m.params_mut().zero_grad();
    let mut g = Graph::new();
    let (_, out) = m.forward_train(&mut g, x).unwrap();
    let loss = g.mse(out, &target).unwrap();
    g.backward(loss, m.params_mut()).unwrap();

    let ids: Vec<_> = model.params().ids().collect();
    let mut result = Vec::new();
    for id in ids {
        let p = m.params().get(id);
        let n = p.value.len();
        let stride = n.div_ceil(per_param).max(1);
        let picks: Vec<usize> = (0..n).step_by(stride).collect();
        let analytic: Vec<f64> = picks.iter().map(|&j| p.grad.data()[j]).collect();
        let numeric: Vec<f64> = picks
            .iter()
            .map(|&j| {
                let x0 = model.params().get(id).value.data()[j];
                let mut probe = model.clone();
                central_difference(
                    |v| {
                        probe.params_mut().get_mut(id).value.data_mut()[j] = v;
                        train_loss(&probe, x, &target)
                    },
                    x0,
                    FD_STEP,
                )
            })
            .collect();
        result.push((p.name.clone(), analytic, numeric));
    }
    result
}

/// Gradient of the training-mode MSE with respect to the model's token
/// matrix (input plus positional embedding), analytic and numeric. The
/// numeric side perturbs the raw input window, which maps one-to-one onto
/// the unpadded token columns.
pub fn check_model_input(model: &Model, x: &Array3<f64>, y: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let target = Tensor::from_array2(y);
    let mut m = model.clone();
    let mut g = Graph::new();
    let (input, out) = m.forward_train(&mut g, x).unwrap();
    let loss = g.mse(out, &target).unwrap();
    let grads = g.gradients(loss).unwrap();
    let token_grad = grads.get(input).unwrap().to_vec();
    let (rows, d) = (g.value(input).shape()[0], g.value(input).shape()[1]);
    let (b, t, n) = x.dim();
    // Transformer tokens are [b * t, d]; MLP inputs are [b, t * n].
    let per_step = rows == b * t;
    let mut analytic = Vec::with_capacity(b * t * n);
    let mut numeric = Vec::with_capacity(b * t * n);
    let mut probe = x.clone();
    for bi in 0..b {
        for ti in 0..t {
            for si in 0..n {
                analytic.push(if per_step {
                    token_grad[(bi * t + ti) * d + si]
                } else {
                    token_grad[bi * d + ti * n + si]
                });
                let x0 = x[[bi, ti, si]];
                numeric.push(central_difference(
                    |v| {
                        probe[[bi, ti, si]] = v;
                        let l = train_loss(model, &probe, &target);
                        probe[[bi, ti, si]] = x0;
                        l
                    },
                    x0,
                    FD_STEP,
                ));
            }
        }
    }
    (analytic, numeric)
}

/// Plain per-head scaled dot-product attention written from the textbook
/// definition with explicit loops; returns output and softmax weights.
pub fn brute_attention(q: &[f64], k: &[f64], v: &[f64], batch: usize, seq: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let mut out = vec![0.0; batch * seq * d];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..seq {
                let mut scores = vec![0.0; seq];
                for (j, s) in scores.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[(b * seq + i) * d + h * dh + c] * k[(b * seq + j) * d + h * dh + c];
                    }
                    *s = dot / (dh as f64).sqrt();
                }
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                for j in 0..seq {
                    let p = scores[j].exp() / denom;
                    probs[((b * heads + h) * seq + i) * seq + j] = p;
                    for c in 0..dh {
                        out[(b * seq + i) * d + h * dh + c] += p * v[(b * seq + j) * d + h * dh + c];
                    }
                }
            }
        }
    }
    (out, probs)
}

pub fn naive_rmse(cells: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in cells {
        for i in 0..p.len() {
            sum += (p[i] - t[i]).powi(2);
            n += 1;
        }
    }
    (sum / n as f64).sqrt()
}

pub fn naive_mae(cells: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in cells {
        for i in 0..p.len() {
            sum += (p[i] - t[i]).abs();
            n += 1;
        }
    }
    sum / n as f64
}

pub fn naive_rmspe(cells: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut acc = 0.0;
    for (p, t) in cells {
        let mut lo = t[0];
        let mut hi = t[0];
        let mut sse = 0.0;
        for i in 0..p.len() {
            lo = lo.min(t[i]);
            hi = hi.max(t[i]);
            sse += (p[i] - t[i]).powi(2);
        }
        acc += (sse / p.len() as f64).sqrt() / (hi - lo);
    }
    acc / cells.len() as f64
}

pub fn naive_pearson(cells: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut acc = 0.0;
    for (p, t) in cells {
        let n = p.len() as f64;
        let mp = p.iter().sum::<f64>() / n;
        let mt = t.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vp = 0.0;
        let mut vt = 0.0;
        for i in 0..p.len() {
            cov += (p[i] - mp) * (t[i] - mt);
            vp += (p[i] - mp).powi(2);
            vt += (t[i] - mt).powi(2);
        }
        acc += cov / (vp.sqrt() * vt.sqrt());
    }
    acc / cells.len() as f64
}
