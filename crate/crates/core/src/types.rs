//! Shared data model: stations, the uniform time axis, ZTD panels and wind cubes.
//!
//! Missing values are NaN paired with an explicit boolean mask (`true` = observed).
//! Wind components are always ordered (u, v, w) along the last cube axis.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for all great-circle distances, in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default data cadence in seconds.
pub const DEFAULT_STEP_SECONDS: i64 = 300;

pub const COMPONENTS: [Component; 3] = [Component::U, Component::V, Component::W];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    U,
    V,
    W,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::U => 0,
            Component::V => 1,
            Component::W => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Component::U => "u",
            Component::V => "v",
            Component::W => "w",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Great-circle distance in km between two (lat, lon) points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Ordered set of stations with coordinate metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StationTable {
    entries: Vec<Station>,
}

impl StationTable {
    /// Builds a table, rejecting duplicate ids and out-of-range coordinates.
    pub fn new(entries: Vec<Station>) -> Result<Self> {
        let table = StationTable { entries };
        let violations = table.violations();
        if let Some(v) = violations.first() {
            return Err(Error::Data(v.to_string()));
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Station] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &Station {
        &self.entries[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|s| s.id == id)
    }

    pub fn distance_km(&self, i: usize, lat: f64, lon: f64) -> f64 {
        let s = &self.entries[i];
        haversine_km(s.lat, s.lon, lat, lon)
    }

    /// Indices of all stations sorted by ascending distance to `(lat, lon)`,
    /// ties broken by ascending station id.
    pub fn ranked_by_distance(&self, lat: f64, lon: f64) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.distance_km(i, lat, lon)))
            .collect();
        ranked.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
        ranked
    }

    pub fn subset(&self, indices: &[usize]) -> StationTable {
        StationTable {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for (i, s) in self.entries.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                out.push(Violation::new("station_id unique", vec![i], format!("duplicate id {}", s.id)));
            }
            if !(-90.0..=90.0).contains(&s.lat) {
                out.push(Violation::new("lat in [-90, 90]", vec![i], format!("lat {}", s.lat)));
            }
            if !(-180.0..=180.0).contains(&s.lon) {
                out.push(Violation::new("lon in [-180, 180]", vec![i], format!("lon {}", s.lon)));
            }
        }
        out
    }
}

/// Uniform time axis; `t_k = start + k * step` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub start: i64,
    pub step: i64,
    pub count: usize,
}

impl TimeAxis {
    pub fn new(start: i64, step: i64, count: usize) -> Result<Self> {
        if step <= 0 {
            return Err(Error::Data(format!("time step must be positive, got {step}")));
        }
        if count == 0 {
            return Err(Error::Data("time axis must have at least one timestamp".into()));
        }
        Ok(TimeAxis { start, step, count })
    }

    pub fn timestamp(&self, k: usize) -> i64 {
        self.start + k as i64 * self.step
    }

    pub fn end(&self) -> i64 {
        self.timestamp(self.count - 1)
    }

    /// Inverse of [`TimeAxis::timestamp`]; `None` off-grid or out of range.
    pub fn index_of(&self, t: i64) -> Option<usize> {
        let off = t - self.start;
        if off < 0 || off % self.step != 0 {
            return None;
        }
        let k = (off / self.step) as usize;
        (k < self.count).then_some(k)
    }

    /// True when both axes share the step and lie on the same grid.
    pub fn same_grid(&self, other: &TimeAxis) -> bool {
        self.step == other.step && (self.start - other.start).rem_euclid(self.step) == 0
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.count).map(|k| self.timestamp(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    #[serde(rename = "height_m")]
    HeightM,
    #[serde(rename = "pressure_hPa")]
    PressureHpa,
}

impl LevelKind {
    pub fn label(self) -> &'static str {
        match self {
            LevelKind::HeightM => "height_m",
            LevelKind::PressureHpa => "pressure_hPa",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            LevelKind::HeightM => "m",
            LevelKind::PressureHpa => "hPa",
        }
    }
}

/// Vertical coordinate: ascending heights or descending pressures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub kind: LevelKind,
    pub values: Vec<f64>,
}

impl LevelSpec {
    pub fn new(kind: LevelKind, values: Vec<f64>) -> Result<Self> {
        let spec = LevelSpec { kind, values };
        if let Some(v) = spec.violations().first() {
            return Err(Error::Data(v.to_string()));
        }
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Short label such as `850hPa` or `110m`.
    pub fn label(&self, i: usize) -> String {
        format!("{}{}", self.values[i], self.kind.unit())
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.values.is_empty() {
            out.push(Violation::new("levels non-empty", vec![], "no levels".into()));
        }
        for (i, w) in self.values.windows(2).enumerate() {
            let ok = match self.kind {
                LevelKind::HeightM => w[1] > w[0],
                LevelKind::PressureHpa => w[1] < w[0],
            };
            if !ok {
                out.push(Violation::new(
                    "levels strictly monotonic",
                    vec![i + 1],
                    format!("{} after {}", w[1], w[0]),
                ));
            }
        }
        out
    }
}

/// One broken invariant, with the offending index (empty when global).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: &'static str,
    pub index: Vec<usize>,
    pub detail: String,
}

impl Violation {
    pub fn new(invariant: &'static str, index: Vec<usize>, detail: String) -> Self {
        Violation { invariant, index, detail }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated at {:?}: {}", self.invariant, self.index, self.detail)
    }
}

/// ZTD observations, `values[[time, station]]` in meters of delay.
#[derive(Debug, Clone, PartialEq)]
pub struct ZtdPanel {
    axis: TimeAxis,
    stations: StationTable,
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl ZtdPanel {
    pub fn new(axis: TimeAxis, stations: StationTable, values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let expected = (axis.count, stations.len());
        if values.dim() != expected || mask.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "panel values {:?} / mask {:?}, expected {:?}",
                values.dim(),
                mask.dim(),
                expected
            )));
        }
        Ok(ZtdPanel { axis, stations, values, mask })
    }

    /// Panel with every entry observed.
    pub fn fully_observed(axis: TimeAxis, stations: StationTable, values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(axis, stations, values, mask)
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }
    pub fn stations(&self) -> &StationTable {
        &self.stations
    }
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn into_parts(self) -> (TimeAxis, StationTable, Array2<f64>, Array2<bool>) {
        (self.axis, self.stations, self.values, self.mask)
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Keeps the given station columns, in the given order.
    pub fn select_stations(&self, indices: &[usize]) -> ZtdPanel {
        let values = self.values.select(ndarray::Axis(1), indices);
        let mask = self.mask.select(ndarray::Axis(1), indices);
        ZtdPanel {
            axis: self.axis,
            stations: self.stations.subset(indices),
            values,
            mask,
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.stations.violations();
        for ((t, s), &v) in self.values.indexed_iter() {
            if self.mask[[t, s]] && !v.is_finite() {
                out.push(Violation::new("finite where observed", vec![t, s], format!("value {v}")));
            }
        }
        out
    }
}

/// Wind observations, `values[[time, level, station, component]]` in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct WindCube {
    axis: TimeAxis,
    levels: LevelSpec,
    stations: StationTable,
    values: Array4<f64>,
    mask: Array4<bool>,
}

impl WindCube {
    pub fn new(
        axis: TimeAxis,
        levels: LevelSpec,
        stations: StationTable,
        values: Array4<f64>,
        mask: Array4<bool>,
    ) -> Result<Self> {
        let (t, l, s, _) = values.dim();
        if (t, l, s) != (axis.count, levels.len(), stations.len()) || mask.dim() != values.dim() {
            return Err(Error::ShapeMismatch(format!(
                "cube values {:?} / mask {:?}, expected ({}, {}, {}, 3)",
                values.dim(),
                mask.dim(),
                axis.count,
                levels.len(),
                stations.len()
            )));
        }
        Ok(WindCube { axis, levels, stations, values, mask })
    }

    pub fn fully_observed(axis: TimeAxis, levels: LevelSpec, stations: StationTable, values: Array4<f64>) -> Result<Self> {
        let mask = Array4::from_elem(values.dim(), true);
        Self::new(axis, levels, stations, values, mask)
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }
    pub fn levels(&self) -> &LevelSpec {
        &self.levels
    }
    pub fn stations(&self) -> &StationTable {
        &self.stations
    }
    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }
    pub fn mask(&self) -> &Array4<bool> {
        &self.mask
    }

    pub fn into_parts(self) -> (TimeAxis, LevelSpec, StationTable, Array4<f64>, Array4<bool>) {
        (self.axis, self.levels, self.stations, self.values, self.mask)
    }

    /// Flattened channel count: levels x stations x 3.
    pub fn channel_count(&self) -> usize {
        self.levels.len() * self.stations.len() * 3
    }

    /// Checks the component axis; every numeric op calls this first.
    pub(crate) fn ensure_three_components(&self) -> Result<()> {
        let c = self.values.dim().3;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("component axis length {c}, expected 3")));
        }
        Ok(())
    }

    pub fn select_stations(&self, indices: &[usize]) -> WindCube {
        WindCube {
            axis: self.axis,
            levels: self.levels.clone(),
            stations: self.stations.subset(indices),
            values: self.values.select(ndarray::Axis(2), indices),
            mask: self.mask.select(ndarray::Axis(2), indices),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.stations.violations();
        out.extend(self.levels.violations());
        let c = self.values.dim().3;
        if c != 3 {
            out.push(Violation::new("component axis length", vec![3], format!("length {c}, expected 3")));
        }
        for (idx, &v) in self.values.indexed_iter() {
            if self.mask[idx] && !v.is_finite() {
                out.push(Violation::new(
                    "finite where observed",
                    vec![idx.0, idx.1, idx.2, idx.3],
                    format!("value {v}"),
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stations(n: usize) -> StationTable {
        StationTable::new(
            (0..n)
                .map(|i| Station { id: format!("S{i}"), lat: 29.0 + i as f64 * 0.1, lon: 120.0 })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_panel_has_no_violations() {
        let axis = TimeAxis::new(0, 300, 3).unwrap();
        let panel = ZtdPanel::fully_observed(axis, stations(2), Array2::from_elem((3, 2), 2.4)).unwrap();
        assert!(panel.validate().is_empty());
    }

    #[test]
    fn nan_under_true_mask_is_reported() {
        let axis = TimeAxis::new(0, 300, 3).unwrap();
        let mut values = Array2::from_elem((3, 2), 2.4);
        values[[0, 0]] = f64::NAN;
        let panel = ZtdPanel::fully_observed(axis, stations(2), values).unwrap();
        let v = panel.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, vec![0, 0]);
    }

    #[test]
    fn four_components_is_one_violation() {
        let axis = TimeAxis::new(0, 300, 2).unwrap();
        let levels = LevelSpec::new(LevelKind::PressureHpa, vec![1000.0]).unwrap();
        let cube = WindCube::fully_observed(axis, levels, stations(1), Array4::zeros((2, 1, 1, 4))).unwrap();
        let v = cube.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, "component axis length");
        assert!(cube.ensure_three_components().is_err());
    }

    #[test]
    fn station_table_rejects_duplicates_and_ranges() {
        let dup = vec![
            Station { id: "A".into(), lat: 0.0, lon: 0.0 },
            Station { id: "A".into(), lat: 1.0, lon: 0.0 },
        ];
        assert!(StationTable::new(dup).is_err());
        let bad = vec![Station { id: "A".into(), lat: 91.0, lon: 0.0 }];
        assert!(StationTable::new(bad).is_err());
    }

    #[test]
    fn level_spec_monotonic() {
        assert!(LevelSpec::new(LevelKind::HeightM, vec![110.0, 760.0]).is_ok());
        assert!(LevelSpec::new(LevelKind::HeightM, vec![760.0, 110.0]).is_err());
        assert!(LevelSpec::new(LevelKind::PressureHpa, vec![1000.0, 925.0]).is_ok());
        assert!(LevelSpec::new(LevelKind::PressureHpa, vec![925.0, 925.0]).is_err());
    }

    #[test]
    fn time_axis_rejects_bad_step() {
        assert!(TimeAxis::new(0, 0, 3).is_err());
        assert!(TimeAxis::new(0, 300, 0).is_err());
        let a = TimeAxis::new(600, 300, 4).unwrap();
        assert!(a.same_grid(&TimeAxis::new(0, 300, 2).unwrap()));
        assert!(!a.same_grid(&TimeAxis::new(60, 300, 2).unwrap()));
        assert_eq!(a.index_of(750), None);
        assert_eq!(a.index_of(1500), Some(3));
        assert_eq!(a.index_of(1800), None);
    }

    proptest! {
        #[test]
        fn time_axis_index_bijection(start in -1_000_000i64..1_000_000, step in 1i64..10_000, count in 1usize..500) {
            let axis = TimeAxis::new(start, step, count).unwrap();
            for k in 0..count {
                prop_assert_eq!(axis.index_of(axis.timestamp(k)), Some(k));
            }
        }
    }
}
