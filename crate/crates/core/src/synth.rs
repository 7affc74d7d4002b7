//! Synthetic coupled ZTD / wind datasets driven by a shared latent process.
//!
//! A handful of latent modes evolve as AR(1) noise (coefficient 0.95) plus
//! 3-hour and 24-hour sinusoids. Each mode has a spatial footprint: ZTD at a
//! station is a baseline plus the footprint-weighted sum of the modes. Wind at
//! time `t + lead_coupling_steps` is a per-channel affine+tanh mixing of the
//! modes at time `t`, so future wind is predictable from the current ZTD
//! window by construction.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::preprocess::{build_samples, fill_gaps, SplitConfig};
use crate::samples::{SampleSet, Split};
use crate::types::{LevelKind, LevelSpec, Station, StationTable, TimeAxis, WindCube, ZtdPanel, DEFAULT_STEP_SECONDS};

pub const REFERENCE_LAT: f64 = 29.3619;
pub const REFERENCE_LON: f64 = 120.0717;
/// 2024-06-01T00:00:00Z
pub const SYNTH_START: i64 = 1_717_200_000;

const AR_COEFF: f64 = 0.95;
const PERIODS_STEPS: [f64; 2] = [36.0, 288.0];
const SINUSOID_AMPLITUDE: f64 = 0.5;
const GRID_SPACING_DEG: f64 = 0.1;
const ZTD_BASE_M: f64 = 2.4;
const ZTD_SCALE_M: f64 = 0.02;
/// Mean and amplitude (m/s) of u, v, w.
const WIND_MEAN: [f64; 3] = [3.0, -2.0, 0.0];
const WIND_AMPLITUDE: [f64; 3] = [5.0, 5.0, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_ztd_stations: usize,
    pub n_wind_stations: usize,
    pub n_levels: usize,
    pub n_steps: usize,
    pub latent_dim: usize,
    /// Noise standard deviation as a fraction of each signal's amplitude.
    pub noise_std: f64,
    pub missing_rate: f64,
    pub lead_coupling_steps: usize,
    /// Gain `g` inside the wind mixing `tanh(g z) / g`; small values are
    /// nearly linear, values above 1 saturate strongly.
    pub nonlinearity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_ztd_stations: 60,
            n_wind_stations: 3,
            n_levels: 3,
            n_steps: 4000,
            latent_dim: 8,
            noise_std: 0.05,
            missing_rate: 0.02,
            lead_coupling_steps: 6,
            nonlinearity: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_ztd_stations", self.n_ztd_stations),
            ("n_wind_stations", self.n_wind_stations),
            ("n_levels", self.n_levels),
            ("n_steps", self.n_steps),
            ("latent_dim", self.latent_dim),
            ("lead_coupling_steps", self.lead_coupling_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        for (name, v) in [("noise_std", self.noise_std), ("missing_rate", self.missing_rate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.nonlinearity > 0.0 && self.nonlinearity.is_finite()) {
            return Err(Error::Config("nonlinearity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub ztd: ZtdPanel,
    pub wind: WindCube,
    /// `[n_steps, latent_dim]`, aligned with the ZTD time axis.
    pub latent: Array2<f64>,
}

impl SynthData {
    pub fn ztd_stations(&self) -> &StationTable {
        self.ztd.stations()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Jittered square grid centred on the reference point.
fn grid_stations<R: Rng>(rng: &mut R, n: usize) -> Vec<Station> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let dy = (r as f64 - (rows - 1) as f64 / 2.0) * GRID_SPACING_DEG;
            let dx = (c as f64 - (cols - 1) as f64 / 2.0) * GRID_SPACING_DEG;
            let jitter = GRID_SPACING_DEG * 0.3;
            Station {
                id: format!("Z{i:04}"),
                lat: REFERENCE_LAT + dy + rng.random_range(-jitter..jitter),
                lon: REFERENCE_LON + dx + rng.random_range(-jitter..jitter),
            }
        })
        .collect()
}

/// Wind sites: the first sits on the reference point, the rest on a ring.
fn wind_stations(n: usize, extent: f64) -> Vec<Station> {
    (0..n)
        .map(|i| {
            let (lat, lon) = if i == 0 {
                (REFERENCE_LAT, REFERENCE_LON)
            } else {
                let angle = std::f64::consts::TAU * (i - 1) as f64 / (n - 1) as f64;
                (REFERENCE_LAT + 0.3 * extent * angle.cos(), REFERENCE_LON + 0.3 * extent * angle.sin())
            };
            Station { id: format!("W{i:02}"), lat, lon }
        })
        .collect()
}

fn pressure_levels(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1000.0];
    }
    (0..n).map(|i| 1000.0 - 600.0 * i as f64 / (n - 1) as f64).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim;
    let lc = cfg.lead_coupling_steps;
    let total = cfg.n_steps + lc;

    let ztd_sites = grid_stations(&mut rng, cfg.n_ztd_stations);
    let extent = {
        let lats = ztd_sites.iter().map(|s| s.lat);
        let span = lats.clone().fold(f64::MIN, f64::max) - lats.fold(f64::MAX, f64::min);
        span.max(GRID_SPACING_DEG)
    };
    let wind_sites = wind_stations(cfg.n_wind_stations, extent);

    // Latent modes over [-lc, n_steps): row r is time r - lc.
    let phases: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)]).collect();
    let innovation = (1.0 - AR_COEFF * AR_COEFF).sqrt();
    let mut latent = Array2::zeros((total, k));
    for j in 0..k {
        let mut ar = normal(&mut rng);
        for r in 0..total {
            if r > 0 {
                ar = AR_COEFF * ar + innovation * normal(&mut rng);
            }
            let t = r as f64 - lc as f64;
            let periodic: f64 = PERIODS_STEPS
                .iter()
                .zip(phases[j])
                .map(|(p, ph)| SINUSOID_AMPLITUDE * (std::f64::consts::TAU * t / p + ph).sin())
                .sum();
            latent[[r, j]] = ar + periodic;
        }
    }

    // Mode footprints: Gaussian bumps centred inside the station cloud.
    let radius = extent / 6.0;
    let centres: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            (
                REFERENCE_LAT + rng.random_range(-0.5..0.5) * extent,
                REFERENCE_LON + rng.random_range(-0.5..0.5) * extent,
            )
        })
        .collect();
    let footprint = |lat: f64, lon: f64, j: usize, r: f64| {
        let d2 = (lat - centres[j].0).powi(2) + (lon - centres[j].1).powi(2);
        (-d2 / (2.0 * r * r)).exp()
    };

    let ns = cfg.n_ztd_stations;
    let offsets: Vec<f64> = (0..ns).map(|_| rng.random_range(-0.05..0.05)).collect();
    let signs: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mut ztd = Array2::zeros((cfg.n_steps, ns));
    for (s, site) in ztd_sites.iter().enumerate() {
        let w: Vec<f64> = (0..k).map(|j| signs[j] * footprint(site.lat, site.lon, j, radius)).collect();
        for t in 0..cfg.n_steps {
            let signal: f64 = (0..k).map(|j| w[j] * latent[[t + lc, j]]).sum();
            ztd[[t, s]] = ZTD_BASE_M + offsets[s] + ZTD_SCALE_M * signal + cfg.noise_std * ZTD_SCALE_M * normal(&mut rng);
        }
    }
    let mut mask = Array2::from_elem((cfg.n_steps, ns), true);
    for (v, m) in ztd.iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() < cfg.missing_rate {
            *v = f64::NAN;
            *m = false;
        }
    }

    // Wind at t is driven by the latent at t - lc.
    let (nl, nw) = (cfg.n_levels, cfg.n_wind_stations);
    let g = cfg.nonlinearity;
    let mut wind = Array4::zeros((cfg.n_steps, nl, nw, 3));
    for l in 0..nl {
        for (s, site) in wind_sites.iter().enumerate() {
            for c in 0..3 {
                let raw: Vec<f64> = (0..k).map(|j| normal(&mut rng) * footprint(site.lat, site.lon, j, 2.0 * radius)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                let mix: Vec<f64> = raw.iter().map(|x| x / norm).collect();
                let mean = WIND_MEAN[c] + rng.random_range(-1.0..1.0) * WIND_AMPLITUDE[c] * 0.2;
                let amp = WIND_AMPLITUDE[c] * (1.0 - 0.1 * l as f64);
                for t in 0..cfg.n_steps {
                    let z: f64 = (0..k).map(|j| mix[j] * latent[[t, j]]).sum();
                    wind[[t, l, s, c]] = mean + amp * (g * z).tanh() / g + cfg.noise_std * amp * normal(&mut rng);
                }
            }
        }
    }

    let axis = TimeAxis::new(SYNTH_START, DEFAULT_STEP_SECONDS, cfg.n_steps)?;
    let ztd = ZtdPanel::new(axis, StationTable::new(ztd_sites)?, ztd, mask)?;
    let levels = LevelSpec::new(LevelKind::PressureHpa, pressure_levels(nl))?;
    let wind = WindCube::fully_observed(axis, levels, StationTable::new(wind_sites)?, wind)?;
    let latent = latent.slice_axis(Axis(0), (lc..).into()).to_owned();
    Ok(SynthData { ztd, wind, latent })
}

/// Least-squares map from the flattened input window (plus intercept) to the
/// targets, fitted on the train split.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    /// `[features + 1, outputs]`, intercept in the last row.
    coef: DMatrix<f64>,
}

const RIDGE: f64 = 1e-8;

fn flatten_rows(set: &SampleSet, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| set.inputs.index_axis(Axis(0), i).iter().copied().collect()).collect()
}

impl LinearOracle {
    pub fn fit(set: &SampleSet) -> Result<Self> {
        let train = set.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::SplitEmpty(Split::Train.label().into()));
        }
        let rows = flatten_rows(set, &train);
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut feature_mean = vec![0.0; p];
        for r in &rows {
            for (m, x) in feature_mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut feature_std = vec![0.0; p];
        for r in &rows {
            for ((s, x), m) in feature_std.iter_mut().zip(r).zip(&feature_mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        feature_std.iter_mut().for_each(|s| *s = if s.sqrt() < 1e-12 { 1.0 } else { s.sqrt() });
        let design = DMatrix::from_fn(rows.len(), p + 1, |i, j| {
            if j == p {
                1.0
            } else {
                (rows[i][j] - feature_mean[j]) / feature_std[j]
            }
        });
        let y = DMatrix::from_fn(train.len(), set.output_dim(), |i, j| set.targets[[train[i], j]]);
        let xtx = design.transpose() * &design;
        let xty = design.transpose() * &y;
        let coef = match xtx.clone().cholesky() {
            Some(ch) => ch.solve(&xty),
            None => {
                log::warn!("normal equations are singular; adding ridge {RIDGE}");
                let ridge = xtx + DMatrix::identity(p + 1, p + 1) * RIDGE;
                ridge
                    .cholesky()
                    .ok_or_else(|| Error::Data("normal equations stay singular after ridge".into()))?
                    .solve(&xty)
            }
        };
        Ok(LinearOracle { feature_mean, feature_std, coef })
    }

    /// Physical-unit predictions for the given samples.
    pub fn predict(&self, set: &SampleSet, idx: &[usize]) -> Array2<f64> {
        let rows = flatten_rows(set, idx);
        let p = self.feature_mean.len();
        let out = self.coef.ncols();
        let mut pred = Array2::zeros((idx.len(), out));
        for (i, r) in rows.iter().enumerate() {
            let x = DVector::from_fn(p + 1, |j, _| if j == p { 1.0 } else { (r[j] - self.feature_mean[j]) / self.feature_std[j] });
            let y = self.coef.transpose() * x;
            for j in 0..out {
                pred[[i, j]] = y[j];
            }
        }
        pred
    }
}

/// Fits the linear oracle and scores it on the test split.
pub fn oracle_linear_fit(
    ztd: &ZtdPanel,
    wind: &WindCube,
    window_steps: usize,
    lead_steps: usize,
    split: &SplitConfig,
) -> Result<MetricReport> {
    let filled = if ztd.is_complete() { ztd.clone() } else { fill_gaps(ztd)? };
    let set = build_samples(&filled, wind, window_steps, lead_steps, split)?;
    oracle_report(&set)
}

pub fn oracle_report(set: &SampleSet) -> Result<MetricReport> {
    let test = set.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::SplitEmpty(Split::Test.label().into()));
    }
    let oracle = LinearOracle::fit(set)?;
    let pred = set.to_cube(&test, &oracle.predict(set, &test))?;
    let truth = set.targets_cube(&test)?;
    let lead_minutes = (set.lead_steps as i64 * set.target_axis.step / 60) as u32;
    MetricReport::evaluate(&pred, &truth, lead_minutes, None)
}
