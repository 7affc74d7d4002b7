//! Encoder-only Transformer regressor and an MLP baseline.
//!
//! Both map a normalized ZTD window `[batch, window, stations]` to the
//! flattened wind target vector. In the Transformer each time step is a token
//! whose features are the station values; the token width is padded with zero
//! columns up to a multiple of `lcm(2, heads)` so the sinusoidal embedding and
//! the head split are both well defined.
//!
//! Transformer parameter count, with `d` the padded width, `N` blocks, window
//! `T` and output size `O`:
//!
//! ```text
//! N * (5 d^2 + 9 d) + T d O + O
//! ```
//!
//! (per block: four `d x d` attention projections with biases, one `d x d`
//! feed-forward layer with bias, two batch norms with `gamma`/`beta`).
//!
//! MLP with input `I = T * stations` and hidden width `H = I`:
//! `I H + H + H H + H + H O + O`.

use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{load_weights, positional_embedding, save_weights, AttentionWeights, BatchNorm, Dense, Graph, NodeId, ParamStore, Tensor};
use crate::samples::{SampleSet, Split};
use crate::types::WindCube;

/// Samples per forward pass when predicting.
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Transformer,
    Mlp,
}

fn default_blocks() -> usize {
    2
}

fn default_heads() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub window_steps: usize,
    pub n_stations: usize,
    #[serde(default = "default_blocks")]
    pub n_encoder_blocks: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    pub output_dim: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ModelConfig {
    pub fn transformer(window_steps: usize, n_stations: usize, output_dim: usize) -> Self {
        ModelConfig {
            arch: Arch::Transformer,
            window_steps,
            n_stations,
            n_encoder_blocks: default_blocks(),
            heads: default_heads(),
            output_dim,
        }
    }

    pub fn mlp(window_steps: usize, n_stations: usize, output_dim: usize) -> Self {
        ModelConfig { arch: Arch::Mlp, ..Self::transformer(window_steps, n_stations, output_dim) }
    }

    /// Shapes taken from a sample set; architecture defaults otherwise.
    pub fn for_samples(arch: Arch, set: &SampleSet) -> Self {
        let base = Self::transformer(set.window_steps, set.n_input_stations(), set.output_dim());
        ModelConfig { arch, ..base }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_steps == 0 || self.n_stations == 0 || self.output_dim == 0 {
            return Err(Error::Config("model window, stations and output_dim must be positive".into()));
        }
        if self.arch == Arch::Transformer && self.heads == 0 {
            return Err(Error::Config("heads must be positive".into()));
        }
        Ok(())
    }

    /// Token width: station count for the MLP, padded width for the Transformer.
    pub fn width(&self) -> usize {
        match self.arch {
            Arch::Mlp => self.n_stations,
            Arch::Transformer => {
                let m = 2 * self.heads / gcd(2, self.heads);
                self.n_stations.div_ceil(m) * m
            }
        }
    }

    /// Closed-form parameter count (see module docs).
    pub fn param_count(&self) -> usize {
        let (t, o) = (self.window_steps, self.output_dim);
        match self.arch {
            Arch::Transformer => {
                let d = self.width();
                self.n_encoder_blocks * (5 * d * d + 9 * d) + t * d * o + o
            }
            Arch::Mlp => {
                let i = t * self.n_stations;
                i * i + i + i * i + i + i * o + o
            }
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    attn: AttentionWeights,
    bn1: BatchNorm,
    ff: Dense,
    bn2: BatchNorm,
}

#[derive(Debug, Clone)]
enum Body {
    Transformer { blocks: Vec<EncoderBlock>, pe: Tensor },
    Mlp { hidden: Vec<Dense> },
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    body: Body,
    head: Dense,
}

impl Model {
    /// Glorot-initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (t, o) = (config.window_steps, config.output_dim);
        let (body, head) = match config.arch {
            Arch::Transformer => {
                let d = config.width();
                let blocks = (0..config.n_encoder_blocks)
                    .map(|i| {
                        Ok(EncoderBlock {
                            attn: AttentionWeights::new(&mut store, &format!("block{i}.attn"), d, config.heads, &mut rng)?,
                            bn1: BatchNorm::new(&mut store, &format!("block{i}.bn1"), d),
                            ff: Dense::new(&mut store, &format!("block{i}.ff"), d, d, &mut rng),
                            bn2: BatchNorm::new(&mut store, &format!("block{i}.bn2"), d),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let head = Dense::new(&mut store, "head", t * d, o, &mut rng);
                (Body::Transformer { blocks, pe: positional_embedding(t, d)? }, head)
            }
            Arch::Mlp => {
                let i = t * config.n_stations;
                let hidden = vec![
                    Dense::new(&mut store, "hidden0", i, i, &mut rng),
                    Dense::new(&mut store, "hidden1", i, i, &mut rng),
                ];
                let head = Dense::new(&mut store, "head", i, o, &mut rng);
                (Body::Mlp { hidden }, head)
            }
        };
        Ok(Model { config, store, body, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Token matrix `[batch * window, width]` with padding and, for the
    /// Transformer, the positional embedding added.
    fn tokens(&self, x: &Array3<f64>) -> Result<Tensor> {
        let (b, t, n) = x.dim();
        if t != self.config.window_steps || n != self.config.n_stations {
            return Err(Error::ShapeMismatch(format!(
                "input window {t} x {n} stations, model expects {} x {}",
                self.config.window_steps, self.config.n_stations
            )));
        }
        match &self.body {
            Body::Mlp { .. } => Tensor::new(vec![b, t * n], x.iter().copied().collect()),
            Body::Transformer { pe, .. } => {
                let d = self.config.width();
                let mut data = vec![0.0; b * t * d];
                for bi in 0..b {
                    for ti in 0..t {
                        let row = &mut data[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                        row.copy_from_slice(&pe.data()[ti * d..(ti + 1) * d]);
                        for (r, v) in row.iter_mut().zip(x.slice(s![bi, ti, ..])) {
                            *r += v;
                        }
                    }
                }
                Tensor::new(vec![b * t, d], data)
            }
        }
    }

    /// Training-mode forward: batch norms use batch statistics and update
    /// their running estimates. Returns the input node and the output node.
    pub fn forward_train(&mut self, g: &mut Graph, x: &Array3<f64>) -> Result<(NodeId, NodeId)> {
        let input = g.input(self.tokens(x)?);
        let batch = x.dim().0;
        let (t, d) = (self.config.window_steps, self.config.width());
        let store = &self.store;
        let h = match &mut self.body {
            Body::Transformer { blocks, .. } => {
                let mut h = input;
                for blk in blocks.iter_mut() {
                    let a = blk.attn.forward(g, store, h, batch, t)?;
                    let r = g.add(h, a)?;
                    let n1 = blk.bn1.forward_train(g, store, r)?;
                    let f = blk.ff.forward(g, store, n1)?;
                    let f = g.tanh(f);
                    let r2 = g.add(n1, f)?;
                    h = blk.bn2.forward_train(g, store, r2)?;
                }
                g.reshape(h, &[batch, t * d])?
            }
            Body::Mlp { hidden } => mlp_hidden(g, store, hidden, input)?,
        };
        let out = self.head.forward(g, store, h)?;
        Ok((input, out))
    }

    /// Inference-mode forward using running statistics; does not mutate the model.
    pub fn forward_infer(&self, g: &mut Graph, x: &Array3<f64>) -> Result<(NodeId, NodeId)> {
        let input = g.input(self.tokens(x)?);
        let batch = x.dim().0;
        let (t, d) = (self.config.window_steps, self.config.width());
        let store = &self.store;
        let h = match &self.body {
            Body::Transformer { blocks, .. } => {
                let mut h = input;
                for blk in blocks {
                    let a = blk.attn.forward(g, store, h, batch, t)?;
                    let r = g.add(h, a)?;
                    let n1 = blk.bn1.forward_infer(g, store, r)?;
                    let f = blk.ff.forward(g, store, n1)?;
                    let f = g.tanh(f);
                    let r2 = g.add(n1, f)?;
                    h = blk.bn2.forward_infer(g, store, r2)?;
                }
                g.reshape(h, &[batch, t * d])?
            }
            Body::Mlp { hidden } => mlp_hidden(g, store, hidden, input)?,
        };
        let out = self.head.forward(g, store, h)?;
        Ok((input, out))
    }

    /// Inference-mode outputs `[batch, output_dim]` in normalized target units.
    pub fn predict(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        let n = x.dim().0;
        let mut out = Array2::zeros((n, self.config.output_dim));
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let chunk = x.slice(s![start..end, .., ..]).to_owned();
            let mut g = Graph::new();
            let (_, y) = self.forward_infer(&mut g, &chunk)?;
            let y = g.value(y).to_array2()?;
            out.slice_mut(s![start..end, ..]).assign(&y);
            start = end;
        }
        Ok(out)
    }

    /// Predictions for the given samples, in physical target units (rows in sample order).
    pub fn predict_rows(&self, set: &SampleSet, indices: &[usize]) -> Result<Array2<f64>> {
        let x = set.normalized_inputs(indices)?;
        set.denormalize_targets(&self.predict(&x)?)
    }

    /// Physical-unit predictions for one split, scattered onto the wind time axis.
    pub fn predict_denormalized(&self, set: &SampleSet, split: Split) -> Result<WindCube> {
        let idx = set.indices(split);
        if idx.is_empty() {
            return Err(Error::SplitEmpty(split.label().into()));
        }
        let rows = self.predict_rows(set, &idx)?;
        set.to_cube(&idx, &rows)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        if let Body::Transformer { blocks, .. } = &self.body {
            for (i, blk) in blocks.iter().enumerate() {
                for (tag, bn) in [("bn1", &blk.bn1), ("bn2", &blk.bn2)] {
                    let d = bn.running_mean.len();
                    out.push((format!("block{i}.{tag}.running_mean"), Tensor::new(vec![d], bn.running_mean.clone()).unwrap()));
                    out.push((format!("block{i}.{tag}.running_var"), Tensor::new(vec![d], bn.running_var.clone()).unwrap()));
                }
            }
        }
        out
    }

    /// Writes `<stem>.json` (manifest with the config as header) and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let named = self.named_tensors();
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        save_weights(stem, serde_json::to_value(&self.config)?, &refs)
    }

    /// Loads a checkpoint, taking the configuration from its header.
    pub fn load(stem: &Path) -> Result<Self> {
        let (manifest, tensors) = load_weights(stem)?;
        let config: ModelConfig = serde_json::from_value(manifest.header)?;
        let mut model = Model::new(config, 0)?;
        model.assign(tensors)?;
        Ok(model)
    }

    /// Loads a checkpoint and refuses it unless its configuration equals `expected`.
    pub fn load_expecting(stem: &Path, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(stem)?;
        if model.config != *expected {
            return Err(Error::ConfigMismatch);
        }
        Ok(model)
    }

    fn assign(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let expected = self.named_tensors();
        if tensors.len() != expected.len() {
            return Err(Error::ConfigMismatch);
        }
        for ((name, t), (want_name, want)) in tensors.into_iter().zip(expected) {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::ConfigMismatch);
            }
            if let Some(rest) = name.strip_suffix(".running_mean").or_else(|| name.strip_suffix(".running_var")) {
                let bn = self.batch_norm_mut(rest).ok_or(Error::ConfigMismatch)?;
                if name.ends_with(".running_mean") {
                    bn.running_mean = t.into_data();
                } else {
                    bn.running_var = t.into_data();
                }
            } else {
                let id = self.store.ids().find(|&id| self.store.get(id).name == name).ok_or(Error::ConfigMismatch)?;
                self.store.get_mut(id).value = t;
            }
        }
        Ok(())
    }

    fn batch_norm_mut(&mut self, prefix: &str) -> Option<&mut BatchNorm> {
        let Body::Transformer { blocks, .. } = &mut self.body else { return None };
        let (blk, tag) = prefix.split_once('.')?;
        let i: usize = blk.strip_prefix("block")?.parse().ok()?;
        let b = blocks.get_mut(i)?;
        match tag {
            "bn1" => Some(&mut b.bn1),
            "bn2" => Some(&mut b.bn2),
            _ => None,
        }
    }

    /// Running batch-norm statistics, `(mean, var)` per norm layer in order.
    pub fn running_stats(&self) -> Vec<(&[f64], &[f64])> {
        match &self.body {
            Body::Transformer { blocks, .. } => blocks
                .iter()
                .flat_map(|b| [&b.bn1, &b.bn2])
                .map(|bn| (bn.running_mean.as_slice(), bn.running_var.as_slice()))
                .collect(),
            Body::Mlp { .. } => Vec::new(),
        }
    }
}

fn mlp_hidden(g: &mut Graph, store: &ParamStore, hidden: &[Dense], input: NodeId) -> Result<NodeId> {
    let mut h = input;
    for layer in hidden {
        let z = layer.forward(g, store, h)?;
        h = g.tanh(z);
    }
    Ok(h)
}
