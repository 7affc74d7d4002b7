//! Supervised samples: ZTD input windows paired with flattened wind targets.

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LevelSpec, StationTable, TimeAxis, WindCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Mean and standard deviation per input station and per target channel,
/// computed on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

/// Population mean/std per column; zero spread is reported as std 1 so that
/// normalization stays finite.
pub(crate) fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    let mut n = 0usize;
    for row in rows.clone() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
        n += 1;
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; width];
    for row in rows {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Aligned (window, target) pairs with split labels.
///
/// Target channels are flattened in (level, station, component) order:
/// `channel = (level * n_stations + station) * 3 + component`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub inputs: Array3<f64>,
    pub targets: Array2<f64>,
    pub window_steps: usize,
    pub lead_steps: usize,
    /// Timestamp of the last input row per sample.
    pub input_end_times: Vec<i64>,
    /// Timestamp of the target per sample.
    pub target_times: Vec<i64>,
    pub split_labels: Vec<Split>,
    pub norm_stats: Option<NormStats>,
    pub input_stations: StationTable,
    pub target_axis: TimeAxis,
    pub levels: LevelSpec,
    pub target_stations: StationTable,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_input_stations(&self) -> usize {
        self.inputs.dim().2
    }

    pub fn output_dim(&self) -> usize {
        self.targets.dim().1
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split_labels
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_labels.iter().filter(|&&s| s == split).count()
    }

    fn stats(&self) -> Result<&NormStats> {
        self.norm_stats.as_ref().ok_or(Error::UnnormalizedInput)
    }

    /// Normalized input windows for the given samples.
    pub fn normalized_inputs(&self, indices: &[usize]) -> Result<Array3<f64>> {
        let stats = self.stats()?;
        let mut x = self.inputs.select(Axis(0), indices);
        for mut row in x.rows_mut() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.input_mean[s]) / stats.input_std[s];
            }
        }
        Ok(x)
    }

    pub fn normalized_targets(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let stats = self.stats()?;
        let mut y = self.targets.select(Axis(0), indices);
        for mut row in y.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.target_mean[c]) / stats.target_std[c];
            }
        }
        Ok(y)
    }

    pub fn denormalize_targets(&self, normalized: &Array2<f64>) -> Result<Array2<f64>> {
        let stats = self.stats()?;
        let mut y = normalized.clone();
        for mut row in y.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * stats.target_std[c] + stats.target_mean[c];
            }
        }
        Ok(y)
    }

    /// Scatters per-sample flattened predictions back onto the target time axis.
    /// Only the rows of `indices` are marked observed in the returned cube.
    pub fn to_cube(&self, indices: &[usize], rows: &Array2<f64>) -> Result<WindCube> {
        if rows.dim() != (indices.len(), self.output_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "predictions {:?}, expected ({}, {})",
                rows.dim(),
                indices.len(),
                self.output_dim()
            )));
        }
        let (nl, ns) = (self.levels.len(), self.target_stations.len());
        let shape = (self.target_axis.count, nl, ns, 3);
        let mut values = Array4::from_elem(shape, f64::NAN);
        let mut mask = Array4::from_elem(shape, false);
        for (row, &i) in indices.iter().enumerate() {
            let t = self
                .target_axis
                .index_of(self.target_times[i])
                .ok_or_else(|| Error::Misaligned("target time off the wind axis".into()))?;
            for l in 0..nl {
                for s in 0..ns {
                    for c in 0..3 {
                        values[[t, l, s, c]] = rows[[row, (l * ns + s) * 3 + c]];
                        mask[[t, l, s, c]] = true;
                    }
                }
            }
        }
        WindCube::new(self.target_axis, self.levels.clone(), self.target_stations.clone(), values, mask)
    }

    /// Truth cube restricted to the given samples.
    pub fn targets_cube(&self, indices: &[usize]) -> Result<WindCube> {
        let rows = self.targets.select(Axis(0), indices);
        self.to_cube(indices, &rows)
    }
}
