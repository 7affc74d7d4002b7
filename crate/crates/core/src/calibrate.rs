//! CDF matching of raw model outputs onto the training-target distribution.
//!
//! Two per-channel maps are supported: a Gaussian affine map that matches mean
//! and standard deviation, and an empirical quantile map that pushes a value
//! through the piecewise-linear source CDF and the inverse target CDF. Both are
//! fitted from training-split data only.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::model::Model;
use crate::samples::{SampleSet, Split};

pub const CDF_MAP_FORMAT: &str = "gwindcast-cdf-map";
pub const CDF_MAP_VERSION: u32 = 1;
pub const DEFAULT_QUANTILES: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CdfMode {
    #[default]
    GaussianAffine,
    EmpiricalQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub mode: CdfMode,
    pub quantiles: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { mode: CdfMode::GaussianAffine, quantiles: DEFAULT_QUANTILES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineChannel {
    pub src_mean: f64,
    pub src_std: f64,
    pub tgt_mean: f64,
    pub tgt_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileChannel {
    /// Non-decreasing source quantiles at evenly spaced probabilities.
    pub src: Vec<f64>,
    pub tgt: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "channels", rename_all = "snake_case")]
pub enum Channels {
    GaussianAffine(Vec<AffineChannel>),
    EmpiricalQuantile(Vec<QuantileChannel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfMap {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub channels: Channels,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `count` quantiles at probabilities `i / (count - 1)`, linear between order statistics.
fn quantile_table(xs: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    (0..count)
        .map(|i| {
            let pos = if count == 1 { 0.0 } else { last * i as f64 / (count - 1) as f64 };
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Probability position of `y` in a quantile table, clamped to the table ends.
/// Flat runs map to the middle of the run so repeated values stay stable.
fn table_position(table: &[f64], y: f64) -> f64 {
    let n = table.len();
    if n == 1 || y <= table[0] {
        // below the lowest quantile, but a run of equal values at the start
        // still resolves to its midpoint
        let run = table.iter().take_while(|&&q| q == table[0]).count();
        return if y < table[0] { 0.0 } else { (run - 1) as f64 / 2.0 };
    }
    if y >= table[n - 1] {
        let run = table.iter().rev().take_while(|&&q| q == table[n - 1]).count();
        return if y > table[n - 1] { (n - 1) as f64 } else { (n - 1) as f64 - (run - 1) as f64 / 2.0 };
    }
    let lo = table.partition_point(|&q| q < y);
    let hi = table.partition_point(|&q| q <= y);
    if hi > lo {
        // y equals table[lo..hi]
        return (lo + hi - 1) as f64 / 2.0;
    }
    // table[lo - 1] < y < table[lo]
    let (a, b) = (table[lo - 1], table[lo]);
    (lo - 1) as f64 + (y - a) / (b - a)
}

fn table_value(table: &[f64], pos: f64) -> f64 {
    let lo = pos.floor() as usize;
    let hi = (pos.ceil() as usize).min(table.len() - 1);
    table[lo] + (pos - lo as f64) * (table[hi] - table[lo])
}

impl AffineChannel {
    pub fn apply(&self, y: f64) -> f64 {
        if self.src_std > 0.0 {
            (y - self.src_mean) / self.src_std * self.tgt_std + self.tgt_mean
        } else {
            y
        }
    }

    pub fn is_pass_through(&self) -> bool {
        self.src_std <= 0.0
    }
}

impl QuantileChannel {
    pub fn apply(&self, y: f64) -> f64 {
        table_value(&self.tgt, table_position(&self.src, y))
    }
}

impl CdfMap {
    /// Fits per-channel maps from raw outputs on the train split (`source`)
    /// and the corresponding train targets (`target`), both `[samples, channels]`.
    pub fn fit(source: &Array2<f64>, target: &Array2<f64>, cfg: &CalibrationConfig) -> Result<Self> {
        if source.nrows() == 0 {
            return Err(Error::EmptyTrain);
        }
        if source.dim() != target.dim() {
            return Err(Error::ShapeMismatch(format!("source {:?} vs target {:?}", source.dim(), target.dim())));
        }
        let columns = |a: &Array2<f64>| -> Vec<Vec<f64>> { a.columns().into_iter().map(|c| c.to_vec()).collect() };
        let (src, tgt) = (columns(source), columns(target));
        let channels = match cfg.mode {
            CdfMode::GaussianAffine => Channels::GaussianAffine(
                src.iter()
                    .zip(&tgt)
                    .map(|(s, t)| {
                        let (src_mean, src_std) = mean_std(s);
                        let (tgt_mean, tgt_std) = mean_std(t);
                        AffineChannel { src_mean, src_std, tgt_mean, tgt_std }
                    })
                    .collect(),
            ),
            CdfMode::EmpiricalQuantile => {
                if cfg.quantiles < 2 {
                    return Err(Error::Config("quantile mode needs at least 2 quantiles".into()));
                }
                Channels::EmpiricalQuantile(
                    src.iter()
                        .zip(&tgt)
                        .map(|(s, t)| QuantileChannel {
                            src: quantile_table(s, cfg.quantiles),
                            tgt: quantile_table(t, cfg.quantiles),
                        })
                        .collect(),
                )
            }
        };
        Ok(CdfMap { format: CDF_MAP_FORMAT.into(), version: CDF_MAP_VERSION, channels })
    }

    /// Fits from the model's physical-unit outputs on the train split; val and
    /// test targets are never read.
    pub fn fit_model(model: &Model, set: &SampleSet, cfg: &CalibrationConfig) -> Result<Self> {
        let train = set.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::EmptyTrain);
        }
        let raw = model.predict_rows(set, &train)?;
        let truth = set.targets.select(ndarray::Axis(0), &train);
        Self::fit(&raw, &truth, cfg)
    }

    pub fn mode(&self) -> CdfMode {
        match self.channels {
            Channels::GaussianAffine(_) => CdfMode::GaussianAffine,
            Channels::EmpiricalQuantile(_) => CdfMode::EmpiricalQuantile,
        }
    }

    pub fn channel_count(&self) -> usize {
        match &self.channels {
            Channels::GaussianAffine(c) => c.len(),
            Channels::EmpiricalQuantile(c) => c.len(),
        }
    }

    pub fn apply_value(&self, channel: usize, y: f64) -> f64 {
        match &self.channels {
            Channels::GaussianAffine(c) => c[channel].apply(y),
            Channels::EmpiricalQuantile(c) => c[channel].apply(y),
        }
    }

    /// Calibrates `[samples, channels]` predictions.
    pub fn apply(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.channel_count() {
            return Err(Error::ChannelMismatch { expected: self.channel_count(), got: raw.ncols() });
        }
        let mut out = raw.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.apply_value(c, *v);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map: CdfMap = read_json(path)?;
        if map.format != CDF_MAP_FORMAT || map.version != CDF_MAP_VERSION {
            return Err(Error::Parse(format!("unsupported calibration file {} v{}", map.format, map.version)));
        }
        Ok(map)
    }
}
