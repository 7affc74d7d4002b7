//! Verification metrics: RMSE, MAE, RMSPE and Pearson R, plus the
//! per-(lead, level, component) report and the lead x level mosaic tables.
//!
//! RMSE and MAE pool every (time, cell) element. RMSPE and R are temporal
//! statistics per cell (one station at one level for one component), averaged
//! over cells. Cells whose truth has zero temporal range (RMSPE) or whose
//! prediction or truth is constant in time (R) are excluded and counted.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_sig9;
use crate::types::{Component, LevelKind, WindCube, COMPONENTS};

/// Paired prediction and truth series for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSeries {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesSet {
    cells: Vec<CellSeries>,
}

impl SeriesSet {
    pub fn new(cells: Vec<CellSeries>) -> Result<Self> {
        for (i, c) in cells.iter().enumerate() {
            if c.pred.len() != c.truth.len() {
                return Err(Error::ShapeMismatch(format!(
                    "cell {i}: {} predictions vs {} truths",
                    c.pred.len(),
                    c.truth.len()
                )));
            }
        }
        Ok(SeriesSet { cells })
    }

    pub fn single(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Self::new(vec![CellSeries { pred: pred.to_vec(), truth: truth.to_vec() }])
    }

    pub fn cells(&self) -> &[CellSeries] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(|c| c.pred.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.cells
            .iter()
            .flat_map(|c| c.pred.iter().copied().zip(c.truth.iter().copied()))
    }
}

/// A cell-averaged statistic with the number of cells used and excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellAverage {
    pub value: f64,
    pub cells_used: usize,
    pub cells_excluded: usize,
}

pub fn rmse(set: &SeriesSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sse: f64 = set.pairs().map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / set.len() as f64).sqrt())
}

pub fn mae(set: &SeriesSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sae: f64 = set.pairs().map(|(p, t)| (p - t).abs()).sum();
    Ok(sae / set.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over cells of temporal RMSE divided by the temporal range of truth.
pub fn rmspe(set: &SeriesSet) -> Result<CellAverage> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ratios = Vec::new();
    let mut excluded = 0;
    for cell in set.cells() {
        if cell.truth.is_empty() {
            excluded += 1;
            continue;
        }
        let max = cell.truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = cell.truth.iter().copied().fold(f64::INFINITY, f64::min);
        let range = max - min;
        if range.is_nan() || range <= 0.0 {
            excluded += 1;
            continue;
        }
        let sse: f64 = cell
            .pred
            .iter()
            .zip(&cell.truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        ratios.push((sse / cell.pred.len() as f64).sqrt() / range);
    }
    if ratios.is_empty() {
        return Err(Error::AllCellsDegenerate(excluded));
    }
    Ok(CellAverage { value: mean(&ratios), cells_used: ratios.len(), cells_excluded: excluded })
}

/// Mean over cells of the temporal Pearson correlation.
pub fn pearson_r(set: &SeriesSet) -> Result<CellAverage> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rs = Vec::new();
    let mut excluded = 0;
    for cell in set.cells() {
        if cell.pred.len() < 2 {
            excluded += 1;
            continue;
        }
        let (mp, mt) = (mean(&cell.pred), mean(&cell.truth));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (p, t) in cell.pred.iter().zip(&cell.truth) {
            let (dp, dt) = (p - mp, t - mt);
            sxy += dp * dt;
            sxx += dp * dp;
            syy += dt * dt;
        }
        if !(sxx > 0.0 && syy > 0.0) {
            excluded += 1;
            continue;
        }
        rs.push((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    }
    if rs.is_empty() {
        return Err(Error::AllCellsDegenerate(excluded));
    }
    Ok(CellAverage { value: mean(&rs), cells_used: rs.len(), cells_excluded: excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Mae,
    Rmspe,
    R,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rmse, Metric::Mae, Metric::Rmspe, Metric::R];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Rmspe => "rmspe",
            Metric::R => "r",
        }
    }
}

/// All four metrics for one group of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub rmse: f64,
    pub mae: f64,
    pub rmspe: Option<f64>,
    pub r: Option<f64>,
    /// Pooled element count.
    pub n: usize,
    pub rmspe_cells_excluded: usize,
    pub r_cells_excluded: usize,
}

impl MetricValues {
    pub fn compute(set: &SeriesSet) -> Result<Self> {
        let rmspe = match rmspe(set) {
            Ok(v) => Some(v),
            Err(Error::AllCellsDegenerate(_)) => None,
            Err(e) => return Err(e),
        };
        let r = match pearson_r(set) {
            Ok(v) => Some(v),
            Err(Error::AllCellsDegenerate(_)) => None,
            Err(e) => return Err(e),
        };
        let n_cells = set.cells().len();
        Ok(MetricValues {
            rmse: rmse(set)?,
            mae: mae(set)?,
            rmspe: rmspe.map(|a| a.value),
            r: r.map(|a| a.value),
            n: set.len(),
            rmspe_cells_excluded: rmspe.map_or(n_cells, |a| a.cells_excluded),
            r_cells_excluded: r.map_or(n_cells, |a| a.cells_excluded),
        })
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Rmse => Some(self.rmse),
            Metric::Mae => Some(self.mae),
            Metric::Rmspe => self.rmspe,
            Metric::R => self.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub lead_minutes: u32,
    pub level: f64,
    pub component: Component,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lead_minutes: u32,
    pub component: Component,
    #[serde(flatten)]
    pub values: MetricValues,
}

/// Metrics per (lead, level, component) plus per-(lead, component) summaries
/// pooled over levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level_kind: LevelKind,
    pub cells: Vec<MetricCell>,
    pub summary: Vec<SummaryRow>,
}

fn collect_series(pred: &WindCube, truth: &WindCube, level: usize, component: usize, stations: &[usize]) -> SeriesSet {
    let nt = truth.axis().count;
    let (pv, pm, tv, tm) = (pred.values(), pred.mask(), truth.values(), truth.mask());
    let cells = stations
        .iter()
        .map(|&s| {
            let mut cell = CellSeries { pred: Vec::new(), truth: Vec::new() };
            for t in 0..nt {
                let idx = [t, level, s, component];
                if pm[idx] && tm[idx] {
                    cell.pred.push(pv[idx]);
                    cell.truth.push(tv[idx]);
                }
            }
            cell
        })
        .filter(|c| !c.pred.is_empty())
        .collect();
    SeriesSet { cells }
}

fn check_aligned(pred: &WindCube, truth: &WindCube) -> Result<()> {
    pred.ensure_three_components()?;
    truth.ensure_three_components()?;
    if pred.axis() != truth.axis() || pred.levels() != truth.levels() || pred.stations() != truth.stations() {
        return Err(Error::Misaligned("prediction and truth cubes differ in axis, levels or stations".into()));
    }
    Ok(())
}

impl MetricReport {
    /// Scores every entry observed in both cubes, optionally restricted to a
    /// subset of station indices.
    pub fn evaluate(pred: &WindCube, truth: &WindCube, lead_minutes: u32, stations: Option<&[usize]>) -> Result<Self> {
        check_aligned(pred, truth)?;
        let all: Vec<usize> = (0..truth.stations().len()).collect();
        let stations = stations.unwrap_or(&all);
        let mut cells = Vec::new();
        let mut summary = Vec::new();
        for comp in COMPONENTS {
            let mut pooled = Vec::new();
            for (l, &level) in truth.levels().values.iter().enumerate() {
                let set = collect_series(pred, truth, l, comp.index(), stations);
                if set.is_empty() {
                    continue;
                }
                cells.push(MetricCell { lead_minutes, level, component: comp, values: MetricValues::compute(&set)? });
                pooled.extend(set.cells);
            }
            if pooled.is_empty() {
                return Err(Error::EmptyInput);
            }
            let set = SeriesSet { cells: pooled };
            summary.push(SummaryRow { lead_minutes, component: comp, values: MetricValues::compute(&set)? });
        }
        Ok(MetricReport { level_kind: truth.levels().kind, cells, summary })
    }

    pub fn cell(&self, lead_minutes: u32, level: f64, component: Component) -> Option<&MetricCell> {
        self.cells
            .iter()
            .find(|c| c.lead_minutes == lead_minutes && c.level == level && c.component == component)
    }

    pub fn summary_for(&self, component: Component) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.component == component)
    }

    pub fn leads(&self) -> BTreeSet<u32> {
        self.cells.iter().map(|c| c.lead_minutes).collect()
    }
}

/// One lead x level matrix for a single metric and component.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicTable {
    pub metric: Metric,
    pub component: Component,
    pub level_kind: LevelKind,
    pub leads: Vec<u32>,
    pub levels: Vec<f64>,
    /// `values[level][lead]`
    pub values: Vec<Vec<Option<f64>>>,
}

impl MosaicTable {
    pub fn file_name(&self) -> String {
        format!("mosaic_{}_{}.csv", self.metric.label(), self.component.label())
    }

    /// Header `level_<unit>,lead_5min,lead_10min,...`; one row per level.
    pub fn to_csv(&self) -> String {
        let mut out = format!("level_{}", self.level_kind.unit());
        for lead in &self.leads {
            out.push_str(&format!(",lead_{lead}min"));
        }
        out.push('\n');
        for (row, level) in self.values.iter().zip(&self.levels) {
            out.push_str(&level.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.map_or_else(|| "NA".to_string(), fmt_sig9));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the 12 (metric x component) lead x level tables from per-lead reports.
pub fn mosaic(reports: &[MetricReport]) -> Result<Vec<MosaicTable>> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    let mut leads: Vec<u32> = reports.iter().flat_map(|r| r.leads()).collect();
    leads.sort_unstable();
    leads.dedup();
    let mut levels: Vec<f64> = Vec::new();
    for c in reports.iter().flat_map(|r| &r.cells) {
        if !levels.contains(&c.level) {
            levels.push(c.level);
        }
    }
    match first.level_kind {
        LevelKind::HeightM => levels.sort_by(|a, b| a.total_cmp(b)),
        LevelKind::PressureHpa => levels.sort_by(|a, b| b.total_cmp(a)),
    }
    let lookup = |lead: u32, level: f64, comp: Component| {
        reports.iter().find_map(|r| r.cell(lead, level, comp))
    };
    let mut tables = Vec::new();
    for metric in Metric::ALL {
        for comp in COMPONENTS {
            let values = levels
                .iter()
                .map(|&level| {
                    leads
                        .iter()
                        .map(|&lead| lookup(lead, level, comp).and_then(|c| c.values.get(metric)))
                        .collect()
                })
                .collect();
            tables.push(MosaicTable {
                metric,
                component: comp,
                level_kind: first.level_kind,
                leads: leads.clone(),
                levels: levels.clone(),
                values,
            });
        }
    }
    Ok(tables)
}
