//! Data preprocessing: gap filling, temporal resampling, height to pressure
//! mapping, wind decomposition, nearest-station selection and sample building.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::{column_stats, NormStats, SampleSet, Split};
use crate::types::{LevelKind, LevelSpec, StationTable, TimeAxis, WindCube, ZtdPanel};

/// Number of neighbours used to reconstruct a station with no observations.
pub const IDW_NEIGHBOURS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureMapParams {
    /// Sea-level reference pressure, hPa.
    pub p0: f64,
    /// Scale height, m.
    pub h_scale: f64,
}

impl Default for PressureMapParams {
    fn default() -> Self {
        PressureMapParams { p0: 1013.25, h_scale: 8000.0 }
    }
}

impl PressureMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.h_scale > 0.0) {
            return Err(Error::Config(format!(
                "pressure map needs p0 > 0 and h_scale > 0, got {} / {}",
                self.p0, self.h_scale
            )));
        }
        Ok(())
    }
}

/// Exponential atmosphere: `p0 * exp(-h / h_scale)`.
pub fn height_to_pressure(h: f64, params: &PressureMapParams) -> f64 {
    params.p0 * (-h / params.h_scale).exp()
}

pub fn pressure_to_height(p: f64, params: &PressureMapParams) -> f64 {
    -params.h_scale * (p / params.p0).ln()
}

/// Speed and meteorological direction (degrees the wind blows from, clockwise
/// from north) to zonal and meridional components.
pub fn decompose_wind(speed: f64, direction_deg: f64) -> Result<(f64, f64)> {
    if speed < 0.0 {
        return Err(Error::NegativeSpeed(speed));
    }
    let theta = direction_deg.rem_euclid(360.0).to_radians();
    Ok((-speed * theta.sin(), -speed * theta.cos()))
}

/// Inverse of [`decompose_wind`]; direction is 0 for calm air.
pub fn compose_wind(u: f64, v: f64) -> (f64, f64) {
    let speed = u.hypot(v);
    if speed == 0.0 {
        return (0.0, 0.0);
    }
    let mut dir = (-u).atan2(-v).to_degrees().rem_euclid(360.0);
    if dir >= 360.0 {
        dir -= 360.0;
    }
    (speed, dir)
}

/// Per-station count of entries filled by [`fill_gaps_with_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub total_entries: usize,
    pub filled_entries: usize,
    pub filled_per_station: BTreeMap<String, usize>,
    /// Stations with no observations, reconstructed from neighbours.
    pub reconstructed_stations: Vec<String>,
}

pub fn fill_gaps(panel: &ZtdPanel) -> Result<ZtdPanel> {
    fill_gaps_with_report(panel).map(|(p, _)| p)
}

/// Fills every masked entry.
///
/// Interior gaps are linearly interpolated in time, edge gaps take the nearest
/// observed value, and stations with no observation at all are rebuilt by
/// inverse-distance-squared weighting of the nearest observed stations.
pub fn fill_gaps_with_report(panel: &ZtdPanel) -> Result<(ZtdPanel, GapReport)> {
    let (nt, ns) = panel.values().dim();
    let mut values = panel.values().clone();
    let mask = panel.mask();
    let mut empty = Vec::new();

    for s in 0..ns {
        let observed: Vec<usize> = (0..nt).filter(|&t| mask[[t, s]]).collect();
        let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
            empty.push(s);
            continue;
        };
        for t in 0..first {
            values[[t, s]] = values[[first, s]];
        }
        for t in last + 1..nt {
            values[[t, s]] = values[[last, s]];
        }
        for pair in observed.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (values[[a, s]], values[[b, s]]);
            for t in a + 1..b {
                let w = (t - a) as f64 / (b - a) as f64;
                values[[t, s]] = va + w * (vb - va);
            }
        }
    }

    if empty.len() == ns {
        return Err(Error::AllMissing);
    }

    let stations = panel.stations();
    for &s in &empty {
        let here = stations.get(s);
        let mut neighbours: Vec<(usize, f64)> = stations
            .ranked_by_distance(here.lat, here.lon)
            .into_iter()
            .filter(|(i, _)| !empty.contains(i))
            .take(IDW_NEIGHBOURS)
            .collect();
        let coincident: Vec<(usize, f64)> = neighbours.iter().copied().filter(|&(_, d)| d == 0.0).collect();
        if !coincident.is_empty() {
            neighbours = coincident.into_iter().map(|(i, _)| (i, 1.0)).collect();
        } else {
            for n in neighbours.iter_mut() {
                n.1 = 1.0 / (n.1 * n.1);
            }
        }
        let total: f64 = neighbours.iter().map(|n| n.1).sum();
        for t in 0..nt {
            let acc: f64 = neighbours.iter().map(|&(i, w)| w * values[[t, i]]).sum();
            values[[t, s]] = acc / total;
        }
    }

    let mut filled_per_station = BTreeMap::new();
    let mut filled = 0;
    for (s, station) in stations.entries().iter().enumerate() {
        let n = (0..nt).filter(|&t| !mask[[t, s]]).count();
        filled += n;
        filled_per_station.insert(station.id.clone(), n);
    }
    let report = GapReport {
        total_entries: nt * ns,
        filled_entries: filled,
        filled_per_station,
        reconstructed_stations: empty.iter().map(|&s| stations.get(s).id.clone()).collect(),
    };
    let out = ZtdPanel::fully_observed(*panel.axis(), stations.clone(), values)?;
    Ok((out, report))
}

/// Linear resampling in time onto the grid of multiples of `target_step`
/// (epoch seconds) that falls inside the source span.
///
/// An output entry is observed only when both bracketing source entries are.
pub fn resample_time(cube: &WindCube, target_step: i64) -> Result<WindCube> {
    cube.ensure_three_components()?;
    if target_step <= 0 {
        return Err(Error::Config(format!("target step must be positive, got {target_step}")));
    }
    let src = cube.axis();
    let first = src.start.div_euclid(target_step) * target_step
        + if src.start.rem_euclid(target_step) == 0 { 0 } else { target_step };
    if first > src.end() {
        return Err(Error::EmptyOverlap);
    }
    let count = ((src.end() - first) / target_step) as usize + 1;
    let axis = TimeAxis::new(first, target_step, count)?;

    let (_, nl, ns, nc) = cube.values().dim();
    let mut values = Array4::from_elem((count, nl, ns, nc), f64::NAN);
    let mut mask = Array4::from_elem((count, nl, ns, nc), false);
    let (sv, sm) = (cube.values(), cube.mask());
    for k in 0..count {
        let off = axis.timestamp(k) - src.start;
        let j = (off / src.step) as usize;
        let rem = off % src.step;
        for l in 0..nl {
            for s in 0..ns {
                for c in 0..nc {
                    if rem == 0 {
                        values[[k, l, s, c]] = sv[[j, l, s, c]];
                        mask[[k, l, s, c]] = sm[[j, l, s, c]];
                    } else if sm[[j, l, s, c]] && sm[[j + 1, l, s, c]] {
                        let w = rem as f64 / src.step as f64;
                        let (a, b) = (sv[[j, l, s, c]], sv[[j + 1, l, s, c]]);
                        values[[k, l, s, c]] = a + w * (b - a);
                        mask[[k, l, s, c]] = true;
                    }
                }
            }
        }
    }
    WindCube::new(axis, cube.levels().clone(), cube.stations().clone(), values, mask)
}

/// Maps height levels to pressure and interpolates linearly in log-pressure
/// onto `targets`. Targets outside the mapped range take the nearest level.
pub fn interpolate_to_pressure_levels(
    cube: &WindCube,
    targets: &LevelSpec,
    params: &PressureMapParams,
) -> Result<WindCube> {
    cube.ensure_three_components()?;
    params.validate()?;
    if cube.levels().kind != LevelKind::HeightM {
        return Err(Error::Data("source cube must be on height levels".into()));
    }
    if targets.kind != LevelKind::PressureHpa {
        return Err(Error::Config("target levels must be pressure levels".into()));
    }
    let log_p: Vec<f64> = cube
        .levels()
        .values
        .iter()
        .map(|&h| height_to_pressure(h, params).ln())
        .collect();
    let nsrc = log_p.len();

    // (lower index, weight on the next index)
    let brackets: Vec<(usize, f64)> = targets
        .values
        .iter()
        .map(|&p| {
            let lp = p.ln();
            if lp >= log_p[0] {
                return (0, 0.0);
            }
            if lp <= log_p[nsrc - 1] {
                return (nsrc - 1, 0.0);
            }
            let i = (0..nsrc - 1).find(|&i| log_p[i] >= lp && lp >= log_p[i + 1]).unwrap();
            if lp == log_p[i] {
                (i, 0.0)
            } else if lp == log_p[i + 1] {
                (i + 1, 0.0)
            } else {
                (i, (log_p[i] - lp) / (log_p[i] - log_p[i + 1]))
            }
        })
        .collect();

    let (nt, _, ns, nc) = cube.values().dim();
    let nl = targets.len();
    let mut values = Array4::from_elem((nt, nl, ns, nc), f64::NAN);
    let mut mask = Array4::from_elem((nt, nl, ns, nc), false);
    let (sv, sm) = (cube.values(), cube.mask());
    for t in 0..nt {
        for (l, &(i, w)) in brackets.iter().enumerate() {
            for s in 0..ns {
                for c in 0..nc {
                    if w == 0.0 {
                        values[[t, l, s, c]] = sv[[t, i, s, c]];
                        mask[[t, l, s, c]] = sm[[t, i, s, c]];
                    } else if sm[[t, i, s, c]] && sm[[t, i + 1, s, c]] {
                        let (a, b) = (sv[[t, i, s, c]], sv[[t, i + 1, s, c]]);
                        values[[t, l, s, c]] = a + w * (b - a);
                        mask[[t, l, s, c]] = true;
                    }
                }
            }
        }
    }
    WindCube::new(*cube.axis(), targets.clone(), cube.stations().clone(), values, mask)
}

/// Indices of the `k` stations closest to the reference point by haversine
/// distance, nearest first, ties broken by station id.
pub fn nearest_station_indices(table: &StationTable, ref_lat: f64, ref_lon: f64, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("station count must be at least 1".into()));
    }
    if k > table.len() {
        return Err(Error::KTooLarge { k, available: table.len() });
    }
    Ok(table
        .ranked_by_distance(ref_lat, ref_lon)
        .into_iter()
        .take(k)
        .map(|(i, _)| i)
        .collect())
}

pub fn select_nearest_stations(table: &StationTable, ref_lat: f64, ref_lon: f64, k: usize) -> Result<StationTable> {
    Ok(table.subset(&nearest_station_indices(table, ref_lat, ref_lon, k)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// (train, val, test) fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [0.7, 0.15, 0.15], seed: 0 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|&r| r.is_nan() || r < 0.0) || self.ratios[0] <= 0.0 || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative with a positive train share and sum to 1, got {:?}",
                self.ratios
            )));
        }
        Ok(())
    }

    /// Shuffles sample positions and assigns them to splits by ratio.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        order.shuffle(&mut rng);
        let n_train = (n as f64 * self.ratios[0]).round() as usize;
        let n_val = ((n as f64 * self.ratios[1]).round() as usize).min(n - n_train.min(n));
        let mut labels = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            labels[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        labels
    }
}

/// Pairs each complete ZTD window with the wind `lead_steps` after its last row.
///
/// Samples whose target has any missing wind entry are skipped. Inputs and
/// targets are stored unnormalized; statistics come from the train split.
pub fn build_samples(
    ztd: &ZtdPanel,
    wind: &WindCube,
    window_steps: usize,
    lead_steps: usize,
    split: &SplitConfig,
) -> Result<SampleSet> {
    wind.ensure_three_components()?;
    split.validate()?;
    if window_steps == 0 || lead_steps == 0 {
        return Err(Error::Config("window_steps and lead_steps must be at least 1".into()));
    }
    let (za, wa) = (ztd.axis(), wind.axis());
    if !za.same_grid(wa) {
        return Err(Error::Misaligned(format!(
            "ZTD axis (start {}, step {}) and wind axis (start {}, step {})",
            za.start, za.step, wa.start, wa.step
        )));
    }
    if !ztd.is_complete() {
        return Err(Error::Data("ZTD panel still has gaps; fill them before building samples".into()));
    }

    let ns_in = ztd.stations().len();
    let (_, nl, ns_out, _) = wind.values().dim();
    let out_dim = nl * ns_out * 3;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut input_end_times = Vec::new();
    let mut target_times = Vec::new();

    for end in window_steps - 1..za.count {
        let t_end = za.timestamp(end);
        let t_target = t_end + lead_steps as i64 * za.step;
        let Some(k) = wa.index_of(t_target) else { continue };
        let wm = wind.mask();
        let complete = (0..nl).all(|l| (0..ns_out).all(|s| (0..3).all(|c| wm[[k, l, s, c]])));
        if !complete {
            continue;
        }
        for t in end + 1 - window_steps..=end {
            inputs.extend(ztd.values().row(t).iter().copied());
        }
        for l in 0..nl {
            for s in 0..ns_out {
                for c in 0..3 {
                    targets.push(wind.values()[[k, l, s, c]]);
                }
            }
        }
        input_end_times.push(t_end);
        target_times.push(t_target);
    }

    let n = target_times.len();
    if n == 0 {
        return Err(Error::NoSamples);
    }
    let inputs = Array3::from_shape_vec((n, window_steps, ns_in), inputs).expect("window layout");
    let targets = Array2::from_shape_vec((n, out_dim), targets).expect("target layout");
    let split_labels = split.assign(n);

    let train: Vec<usize> = (0..n).filter(|&i| split_labels[i] == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::SplitEmpty("train".into()));
    }
    let input_rows: Vec<&[f64]> = train
        .iter()
        .flat_map(|&i| (0..window_steps).map(move |w| (i, w)))
        .map(|(i, w)| {
            let start = (i * window_steps + w) * ns_in;
            &inputs.as_slice().unwrap()[start..start + ns_in]
        })
        .collect();
    let (input_mean, input_std) = column_stats(input_rows.iter().copied(), ns_in);
    let target_rows: Vec<&[f64]> = train
        .iter()
        .map(|&i| &targets.as_slice().unwrap()[i * out_dim..(i + 1) * out_dim])
        .collect();
    let (target_mean, target_std) = column_stats(target_rows.iter().copied(), out_dim);

    Ok(SampleSet {
        inputs,
        targets,
        window_steps,
        lead_steps,
        input_end_times,
        target_times,
        split_labels,
        norm_stats: Some(NormStats { input_mean, input_std, target_mean, target_std }),
        input_stations: ztd.stations().clone(),
        target_axis: *wa,
        levels: wind.levels().clone(),
        target_stations: wind.stations().clone(),
    })
}
