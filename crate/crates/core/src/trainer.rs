//! Adam with bias correction, MSE objective and early stopping.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_string;
use crate::model::Model;
use crate::neural::{mse_value, Graph, ParamStore, Tensor};
use crate::samples::{SampleSet, Split};

/// Where the stabilizing epsilon enters the Adam denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPlacement {
    /// `sqrt(v_hat) + eps`
    #[default]
    OutsideSqrt,
    /// `sqrt(v_hat + eps)`
    InsideSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epsilon_placement: EpsilonPlacement,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epsilon_placement: EpsilonPlacement::OutsideSqrt,
            max_epochs: 5000,
            patience: 1000,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule with a larger step, sized for single-core runs.
    pub fn desk() -> Self {
        TrainConfig { lr: 1e-3, max_epochs: 300, patience: 60, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_epochs and batch_size must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            t: 0,
        }
    }
}

/// One Adam update from the accumulated gradients, which are zeroed afterwards.
///
/// Only `lr`, the betas and epsilon of `cfg` are used; the betas are not
/// range-checked here so degenerate settings can be exercised directly.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    if state.m.len() != store.len() {
        *state = AdamState::new(store);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.data().to_vec();
        for (((theta, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let denom = match cfg.epsilon_placement {
                EpsilonPlacement::OutsideSqrt => v_hat.sqrt() + cfg.epsilon,
                EpsilonPlacement::InsideSqrt => (v_hat + cfg.epsilon).sqrt(),
            };
            *theta -= cfg.lr * m_hat / denom;
        }
        p.grad.data_mut().fill(0.0);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model as of the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Normalized train and validation arrays prepared once per run.
struct Prepared {
    train_x: Array3<f64>,
    train_y: Array2<f64>,
    val_x: Array3<f64>,
    val_y: Array2<f64>,
}

fn prepare(set: &SampleSet) -> Result<Prepared> {
    let train = set.indices(Split::Train);
    let val = set.indices(Split::Val);
    if train.is_empty() {
        return Err(Error::SplitEmpty(Split::Train.label().into()));
    }
    if val.is_empty() {
        return Err(Error::SplitEmpty(Split::Val.label().into()));
    }
    Ok(Prepared {
        train_x: set.normalized_inputs(&train)?,
        train_y: set.normalized_targets(&train)?,
        val_x: set.normalized_inputs(&val)?,
        val_y: set.normalized_targets(&val)?,
    })
}

/// Inference-mode MSE of `model` on already-normalized data.
pub fn evaluate_mse(model: &Model, x: &Array3<f64>, y: &Array2<f64>) -> Result<f64> {
    let pred = model.predict(x)?;
    Ok(mse_value(pred.as_slice().unwrap(), y.as_slice().unwrap()))
}

/// Validation MSE (normalized units) of `model` on the val split of `set`.
pub fn validation_mse(model: &Model, set: &SampleSet) -> Result<f64> {
    let val = set.indices(Split::Val);
    if val.is_empty() {
        return Err(Error::SplitEmpty(Split::Val.label().into()));
    }
    evaluate_mse(model, &set.normalized_inputs(&val)?, &set.normalized_targets(&val)?)
}

/// Splits a shuffled order into batches; a trailing batch of one sample is
/// merged into the previous batch so batch norm always sees two rows.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Trains with the val-split MSE as the early-stopping signal.
pub fn train(model: Model, set: &SampleSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = prepare(set)?;
    let (vx, vy) = (data.val_x.clone(), data.val_y.clone());
    run(model, data, cfg, |m, _| evaluate_mse(m, &vx, &vy))
}

/// Like [`train`] but the per-epoch validation loss comes from `validator`,
/// called with the current model and the 1-based epoch.
pub fn train_with_validator<F>(model: Model, set: &SampleSet, cfg: &TrainConfig, validator: F) -> Result<TrainOutcome>
where
    F: FnMut(&Model, usize) -> Result<f64>,
{
    run(model, prepare(set)?, cfg, validator)
}

fn run<F>(mut model: Model, data: Prepared, cfg: &TrainConfig, mut validator: F) -> Result<TrainOutcome>
where
    F: FnMut(&Model, usize) -> Result<f64>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    model.params_mut().zero_grad();
    let n = data.train_x.dim().0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let x = data.train_x.select(Axis(0), batch);
            let y = Tensor::from_array2(&data.train_y.select(Axis(0), batch));
            let mut g = Graph::new();
            let (_, out) = model.forward_train(&mut g, &x)?;
            let loss = g.mse(out, &y)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(epoch));
            }
            weighted += value * batch.len() as f64;
            g.backward(loss, model.params_mut())?;
            adam_step(model.params_mut(), &mut adam, cfg)?;
        }
        let train_mse = weighted / n as f64;
        let val_mse = validator(&model, epoch)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        history.push(EpochRecord { epoch, train_mse, val_mse });
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6}");
        let improved = best.as_ref().is_none_or(|(_, b, _)| val_mse < *b);
        if improved {
            best = Some((epoch, val_mse, model.clone()));
        }
        let best_epoch = best.as_ref().unwrap().0;
        if epoch - best_epoch >= cfg.patience && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_mse, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, history, best_epoch, best_val_mse, stopped_early })
}

/// `epoch,train_mse,val_mse` with shortest round-trip float formatting.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_string(path, &history_to_csv(history))
}
