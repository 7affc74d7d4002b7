//! Configuration-driven experiments: lead-time sweeps, station-count
//! ablations, gridded-baseline comparison and plot-ready table emission.
//!
//! Every experiment is built from the same stages (`train_stage`,
//! `calibrate_stage`, `predict_stage`, `evaluate_stage`), so running them one by
//! one through files gives the same bytes as a whole sweep.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! synth/                      generated stations, ZTD and wind
//! preprocessed/               gap-filled ZTD, aligned wind, gap report
//! runs/lead_<m>/              single-run stages
//! lead_sweep/lead_<m>/        per-lead run files
//! lead_sweep/mosaic_*.csv     lead x level tables
//! station_ablation/k_<k>/     per-count run files
//! station_ablation/station_metrics.csv, station_radar.csv
//! ```
//!
//! A run directory holds `model.json`/`model.bin`, `history.csv`,
//! `cdf_map.json`, `predictions_raw.bin`, `predictions.bin` and `metrics.json`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Array5};
use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationConfig, CdfMap};
use crate::error::{Error, Result};
use crate::io::{
    cube_to_bytes, fmt_sig9, format_timestamp, panel_to_bytes, parse_timestamp, read_cube_bin, read_json, read_panel_bin, read_stations,
    read_wind, read_ztd, sha256_file, sha256_hex, write_cube_bin, write_json, write_panel_bin, write_stations, write_string,
};
use crate::metrics::{mosaic, Metric, MetricReport};
use crate::model::{Arch, Model, ModelConfig};
use crate::preprocess::{
    fill_gaps_with_report, interpolate_to_pressure_levels, nearest_station_indices, resample_time, build_samples, GapReport,
    PressureMapParams, SplitConfig,
};
use crate::samples::{SampleSet, Split};
use crate::synth::{generate, SynthConfig, REFERENCE_LAT, REFERENCE_LON};
use crate::trainer::{train, write_history, EpochRecord, TrainConfig};
use crate::types::{LevelKind, LevelSpec, StationTable, WindCube, ZtdPanel, COMPONENTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
    },
    /// `.bin` files use the binary layout; anything else is read as delimited
    /// text and needs the matching station table.
    Files {
        ztd: PathBuf,
        wind: PathBuf,
        #[serde(default)]
        ztd_stations: Option<PathBuf>,
        #[serde(default)]
        wind_stations: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { synth: SynthConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub lat: f64,
    pub lon: f64,
}

impl Default for ReferencePoint {
    fn default() -> Self {
        ReferencePoint { lat: REFERENCE_LAT, lon: REFERENCE_LON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub arch: Arch,
    pub n_encoder_blocks: usize,
    pub heads: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { arch: Arch::Transformer, n_encoder_blocks: 2, heads: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub window_steps: usize,
    /// Lead times of the sweep, minutes.
    pub leads: Vec<u32>,
    /// Lead time of single runs and of the station ablation, minutes.
    pub lead: u32,
    pub station_counts: Vec<usize>,
    pub reference: ReferencePoint,
    /// Pressure levels (hPa) that height-level wind is interpolated onto;
    /// empty keeps the source levels.
    pub pressure_levels: Vec<f64>,
    pub pressure_map: PressureMapParams,
    pub split_ratios: [f64; 3],
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Gridded baseline (`timestamp,lat,lon,level,u,v,w`) for `compare-baseline`.
    pub baseline: Option<PathBuf>,
    /// Prediction cube for `evaluate` / `emit-timeseries`; defaults to the
    /// single-run directory of `lead`.
    pub predictions: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            window_steps: 6,
            leads: vec![5, 10, 15, 20, 25, 30],
            lead: 30,
            station_counts: vec![5, 10, 20, 60],
            reference: ReferencePoint::default(),
            pressure_levels: Vec::new(),
            pressure_map: PressureMapParams::default(),
            split_ratios: [0.7, 0.15, 0.15],
            model: ModelSettings::default(),
            train: TrainConfig { lr: 1e-3, max_epochs: 40, patience: 10, ..TrainConfig::default() },
            calibration: CalibrationConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            baseline: None,
            predictions: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_steps == 0 {
            return Err(Error::Config("window_steps must be at least 1".into()));
        }
        if self.leads.is_empty() || self.leads.contains(&0) || self.lead == 0 {
            return Err(Error::Config("lead times must be positive".into()));
        }
        if self.station_counts.windows(2).any(|w| w[0] >= w[1]) || self.station_counts.contains(&0) {
            return Err(Error::Config("station_counts must be positive and strictly ascending".into()));
        }
        self.split().validate()?;
        self.pressure_map.validate()?;
        self.train.validate()?;
        if let DataSource::Synthetic { synth } = &self.data {
            synth.validate()?;
        }
        Ok(())
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig { ratios: self.split_ratios, seed: self.seed }
    }

    /// Directory of the file-piped single run for `lead`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join("runs").join(format!("lead_{}", self.lead))
    }

    pub fn preprocessed_dir(&self) -> PathBuf {
        self.output_dir.join("preprocessed")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Seed for everything that varies per lead (weight init, batch order).
pub fn run_seed(seed: u64, lead_minutes: u32) -> u64 {
    let mut z = seed ^ (lead_minutes as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lead_steps(lead_minutes: u32, step_seconds: i64) -> Result<usize> {
    let secs = lead_minutes as i64 * 60;
    if secs % step_seconds != 0 {
        return Err(Error::Config(format!("lead {lead_minutes} min is not a multiple of the {step_seconds} s step")));
    }
    Ok((secs / step_seconds) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Raw observations as loaded, before preprocessing.
#[derive(Debug, Clone)]
pub struct RawData {
    pub ztd: ZtdPanel,
    pub wind: WindCube,
    pub digests: Vec<FileDigest>,
}

fn read_panel_any(path: &Path, stations: Option<&Path>) -> Result<ZtdPanel> {
    if path.extension().is_some_and(|e| e == "bin") {
        return read_panel_bin(path);
    }
    let stations = stations.ok_or_else(|| Error::Config(format!("{} needs ztd_stations", path.display())))?;
    read_ztd(path, &read_stations(stations)?)
}

fn read_cube_any(path: &Path, stations: Option<&Path>) -> Result<WindCube> {
    if path.extension().is_some_and(|e| e == "bin") {
        return read_cube_bin(path);
    }
    let stations = stations.ok_or_else(|| Error::Config(format!("{} needs wind_stations", path.display())))?;
    read_wind(path, &read_stations(stations)?)
}

pub fn load_raw(source: &DataSource) -> Result<RawData> {
    match source {
        DataSource::Synthetic { synth } => {
            let d = generate(synth)?;
            let digests = vec![
                FileDigest { name: "synthetic:ztd".into(), sha256: sha256_hex(&panel_to_bytes(&d.ztd)) },
                FileDigest { name: "synthetic:wind".into(), sha256: sha256_hex(&cube_to_bytes(&d.wind)) },
            ];
            Ok(RawData { ztd: d.ztd, wind: d.wind, digests })
        }
        DataSource::Files { ztd, wind, ztd_stations, wind_stations } => {
            let mut digests = Vec::new();
            for p in [Some(ztd), Some(wind), ztd_stations.as_ref(), wind_stations.as_ref()].into_iter().flatten() {
                digests.push(FileDigest { name: p.display().to_string(), sha256: sha256_file(p)? });
            }
            Ok(RawData {
                ztd: read_panel_any(ztd, ztd_stations.as_deref())?,
                wind: read_cube_any(wind, wind_stations.as_deref())?,
                digests,
            })
        }
    }
}

/// Gap-filled ZTD and wind on the ZTD time grid and the configured levels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ztd: ZtdPanel,
    pub wind: WindCube,
    pub gap_report: GapReport,
    pub digests: Vec<FileDigest>,
}

pub fn preprocess(raw: RawData, cfg: &ExperimentConfig) -> Result<Dataset> {
    let (ztd, gap_report) = fill_gaps_with_report(&raw.ztd)?;
    let mut wind = raw.wind;
    if wind.levels().kind == LevelKind::HeightM && !cfg.pressure_levels.is_empty() {
        let targets = LevelSpec::new(LevelKind::PressureHpa, cfg.pressure_levels.clone())?;
        wind = interpolate_to_pressure_levels(&wind, &targets, &cfg.pressure_map)?;
    }
    if wind.axis().step != ztd.axis().step || !wind.axis().same_grid(ztd.axis()) {
        wind = resample_time(&wind, ztd.axis().step)?;
    }
    Ok(Dataset { ztd, wind, gap_report, digests: raw.digests })
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    preprocess(load_raw(&cfg.data)?, cfg)
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    write_panel_bin(&dir.join("ztd.bin"), &data.ztd)?;
    write_cube_bin(&dir.join("wind.bin"), &data.wind)?;
    write_json(&dir.join("gap_report.json"), &data.gap_report)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (zp, wp) = (dir.join("ztd.bin"), dir.join("wind.bin"));
    let digests = vec![
        FileDigest { name: "ztd.bin".into(), sha256: sha256_file(&zp)? },
        FileDigest { name: "wind.bin".into(), sha256: sha256_file(&wp)? },
    ];
    Ok(Dataset {
        ztd: read_panel_bin(&zp)?,
        wind: read_cube_bin(&wp)?,
        gap_report: read_json(&dir.join("gap_report.json"))?,
        digests,
    })
}

/// Input-station subset: the `k` stations nearest the reference point, kept in
/// their original panel order.
pub fn nearest_subset(stations: &StationTable, reference: ReferencePoint, k: usize) -> Result<Vec<usize>> {
    let mut idx = nearest_station_indices(stations, reference.lat, reference.lon, k)?;
    idx.sort_unstable();
    Ok(idx)
}

/// Index of the wind station closest to the reference point.
pub fn reference_target_station(wind: &WindCube, reference: ReferencePoint) -> Result<usize> {
    Ok(nearest_station_indices(wind.stations(), reference.lat, reference.lon, 1)?[0])
}

pub fn build_run_samples(cfg: &ExperimentConfig, data: &Dataset, lead_minutes: u32, stations: Option<&[usize]>) -> Result<SampleSet> {
    let steps = lead_steps(lead_minutes, data.ztd.axis().step)?;
    let ztd = match stations {
        Some(idx) => data.ztd.select_stations(idx),
        None => data.ztd.clone(),
    };
    build_samples(&ztd, &data.wind, cfg.window_steps, steps, &cfg.split())
}

pub fn model_config(cfg: &ExperimentConfig, set: &SampleSet) -> ModelConfig {
    ModelConfig {
        n_encoder_blocks: cfg.model.n_encoder_blocks,
        heads: cfg.model.heads,
        ..ModelConfig::for_samples(cfg.model.arch, set)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn train_stage(cfg: &ExperimentConfig, set: &SampleSet, lead_minutes: u32) -> Result<Trained> {
    let seed = run_seed(cfg.seed, lead_minutes);
    let model = Model::new(model_config(cfg, set), seed)?;
    let tc = TrainConfig { seed: seed.wrapping_add(1), ..cfg.train.clone() };
    let out = train(model, set, &tc)?;
    log::info!("lead {lead_minutes} min: best epoch {} val mse {}", out.best_epoch, out.best_val_mse);
    Ok(Trained { model: out.model, history: out.history, best_epoch: out.best_epoch })
}

pub fn calibrate_stage(cfg: &ExperimentConfig, model: &Model, set: &SampleSet) -> Result<CdfMap> {
    CdfMap::fit_model(model, set, &cfg.calibration)
}

/// Raw and calibrated test-split predictions on the wind time axis.
pub fn predict_stage(model: &Model, cdf: &CdfMap, set: &SampleSet) -> Result<(WindCube, WindCube)> {
    let test = set.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::SplitEmpty(Split::Test.label().into()));
    }
    let raw = model.predict_rows(set, &test)?;
    let calibrated = cdf.apply(&raw)?;
    Ok((set.to_cube(&test, &raw)?, set.to_cube(&test, &calibrated)?))
}

pub fn evaluate_stage(pred: &WindCube, set: &SampleSet, lead_minutes: u32, stations: Option<&[usize]>) -> Result<MetricReport> {
    let truth = set.targets_cube(&set.indices(Split::Test))?;
    MetricReport::evaluate(pred, &truth, lead_minutes, stations)
}

/// Scores a predictor that always outputs the train-split target mean.
pub fn mean_predictor_report(set: &SampleSet, lead_minutes: u32, stations: Option<&[usize]>) -> Result<MetricReport> {
    let test = set.indices(Split::Test);
    let stats = set.norm_stats.as_ref().ok_or(Error::UnnormalizedInput)?;
    let rows = Array2::from_shape_fn((test.len(), set.output_dim()), |(_, c)| stats.target_mean[c]);
    evaluate_stage(&set.to_cube(&test, &rows)?, set, lead_minutes, stations)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub lead_minutes: u32,
    pub set: SampleSet,
    pub trained: Trained,
    pub cdf: CdfMap,
    pub raw_pred: WindCube,
    pub pred: WindCube,
    pub truth: WindCube,
    /// Calibrated test metrics over all target stations (or the evaluated subset).
    pub report: MetricReport,
}

impl RunOutput {
    pub fn report_at(&self, stations: Option<&[usize]>) -> Result<MetricReport> {
        MetricReport::evaluate(&self.pred, &self.truth, self.lead_minutes, stations)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_run_files(dir, &self.trained, &self.cdf, &self.raw_pred, &self.pred, &self.report)
    }
}

pub fn write_run_files(
    dir: &Path,
    trained: &Trained,
    cdf: &CdfMap,
    raw_pred: &WindCube,
    pred: &WindCube,
    report: &MetricReport,
) -> Result<()> {
    trained.model.save(&dir.join("model"))?;
    write_history(&dir.join("history.csv"), &trained.history)?;
    cdf.save(&dir.join("cdf_map.json"))?;
    write_cube_bin(&dir.join("predictions_raw.bin"), raw_pred)?;
    write_cube_bin(&dir.join("predictions.bin"), pred)?;
    write_json(&dir.join("metrics.json"), report)
}

/// Train, calibrate, predict and score one (lead, station subset) run.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &Dataset,
    lead_minutes: u32,
    input_stations: Option<&[usize]>,
    eval_stations: Option<&[usize]>,
) -> Result<RunOutput> {
    let set = build_run_samples(cfg, data, lead_minutes, input_stations)?;
    let trained = train_stage(cfg, &set, lead_minutes)?;
    let cdf = calibrate_stage(cfg, &trained.model, &set)?;
    let (raw_pred, pred) = predict_stage(&trained.model, &cdf, &set)?;
    let truth = set.targets_cube(&set.indices(Split::Test))?;
    let report = MetricReport::evaluate(&pred, &truth, lead_minutes, eval_stations)?;
    Ok(RunOutput { lead_minutes, set, trained, cdf, raw_pred, pred, truth, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Writes `manifest.json` listing digests of every file under `dir`.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, inputs: &[FileDigest]) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let outputs = files
        .iter()
        .map(|p| {
            let name = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Ok(FileDigest { name, sha256: sha256_file(p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "gwindcast".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_sha256: cfg.digest(),
        seed: cfg.seed,
        inputs: inputs.to_vec(),
        outputs,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LeadSweep {
    pub runs: Vec<RunOutput>,
    pub dir: PathBuf,
}

impl LeadSweep {
    pub fn reports(&self) -> Vec<MetricReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// One model per lead; writes run files, mosaic tables and a manifest under
/// `output_dir/lead_sweep`.
pub fn run_lead_sweep(cfg: &ExperimentConfig, data: &Dataset) -> Result<LeadSweep> {
    cfg.validate()?;
    let dir = cfg.output_dir.join("lead_sweep");
    let mut runs = Vec::new();
    for &lead in &cfg.leads {
        let run = run_single(cfg, data, lead, None, None)?;
        run.write(&dir.join(format!("lead_{lead}")))?;
        runs.push(run);
    }
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
    for table in mosaic(&reports)? {
        write_string(&dir.join(table.file_name()), &table.to_csv())?;
    }
    write_manifest(&dir, "run-lead-sweep", cfg, &data.digests)?;
    Ok(LeadSweep { runs, dir })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub k: usize,
    /// Metrics at the reference target station.
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub reference_station: usize,
    pub dir: PathBuf,
}

/// Retrains on the `k` input stations nearest the reference point for each
/// configured count and scores the wind station closest to that point.
pub fn run_station_ablation(cfg: &ExperimentConfig, data: &Dataset) -> Result<Ablation> {
    cfg.validate()?;
    let available = data.ztd.stations().len();
    if let Some(&k) = cfg.station_counts.iter().find(|&&k| k > available) {
        return Err(Error::KTooLarge { k, available });
    }
    let target = reference_target_station(&data.wind, cfg.reference)?;
    let dir = cfg.output_dir.join("station_ablation");
    let mut rows = Vec::new();
    for &k in &cfg.station_counts {
        let subset = nearest_subset(data.ztd.stations(), cfg.reference, k)?;
        let run = run_single(cfg, data, cfg.lead, Some(&subset), Some(&[target]))?;
        run.write(&dir.join(format!("k_{k}")))?;
        rows.push(AblationRow { k, report: run.report });
    }
    write_string(&dir.join("station_metrics.csv"), &station_metrics_csv(&rows))?;
    write_string(&dir.join("station_radar.csv"), &station_radar_csv(&rows))?;
    write_manifest(&dir, "run-station-ablation", cfg, &data.digests)?;
    Ok(Ablation { rows, reference_station: target, dir })
}

fn na_or(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_sig9)
}

/// `k,component,metric,value`, one row per (k, component, metric).
pub fn station_metrics_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("k,component,metric,value\n");
    for row in rows {
        for s in &row.report.summary {
            for m in Metric::ALL {
                out.push_str(&format!("{},{},{},{}\n", row.k, s.component.label(), m.label(), na_or(s.values.get(m))));
            }
        }
    }
    out
}

/// `k,component,rmse_div10,mae_div10,rmspe,one_minus_r`
pub fn station_radar_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("k,component,rmse_div10,mae_div10,rmspe,one_minus_r\n");
    for row in rows {
        for s in &row.report.summary {
            let v = &s.values;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.k,
                s.component.label(),
                fmt_sig9(v.rmse / 10.0),
                fmt_sig9(v.mae / 10.0),
                na_or(v.rmspe),
                na_or(v.r.map(|r| 1.0 - r)),
            ));
        }
    }
    out
}

/// Reanalysis-style wind on a regular lat/lon/level grid at hourly (or other
/// fixed) cadence. `values` is `[time, level, lat, lon, component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedBaseline {
    pub times: Vec<i64>,
    pub levels: Vec<f64>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub values: Array5<f64>,
}

fn strictly_ascending(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

fn nearest(xs: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if (v - x).abs() < (xs[best] - x).abs() {
            best = i;
        }
    }
    best
}

impl GriddedBaseline {
    pub fn new(times: Vec<i64>, levels: Vec<f64>, lats: Vec<f64>, lons: Vec<f64>, values: Array5<f64>) -> Result<Self> {
        if times.is_empty() || levels.is_empty() || lats.is_empty() || lons.is_empty() {
            return Err(Error::Data("baseline axes must be non-empty".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) || !strictly_ascending(&lats) || !strictly_ascending(&lons) {
            return Err(Error::Data("baseline time, lat and lon axes must be strictly ascending".into()));
        }
        if !strictly_ascending(&levels) && !levels.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Data("baseline levels must be monotone".into()));
        }
        let dim = (times.len(), levels.len(), lats.len(), lons.len(), 3);
        if values.dim() != dim {
            return Err(Error::ShapeMismatch(format!("baseline values {:?}, axes imply {dim:?}", values.dim())));
        }
        Ok(GriddedBaseline { times, levels, lats, lons, values })
    }

    /// Smallest spacing of the time axis, or one hour for a single time.
    pub fn cadence(&self) -> i64 {
        self.times.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(3600)
    }

    /// Parses `timestamp,lat,lon,level,u,v,w`; every grid combination must appear.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != ["timestamp", "lat", "lon", "level", "u", "v", "w"] {
            return Err(Error::Parse(format!("unexpected baseline header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let t = parse_timestamp(&rec[0])?;
            let nums: Vec<f64> = (1..7)
                .map(|i| rec[i].parse::<f64>().map_err(|_| Error::Parse(format!("bad number {:?}", &rec[i]))))
                .collect::<Result<_>>()?;
            rows.push((t, nums));
        }
        let uniq = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let mut times: Vec<i64> = rows.iter().map(|r| r.0).collect();
        times.sort_unstable();
        times.dedup();
        let lats = uniq(rows.iter().map(|r| r.1[0]).collect());
        let lons = uniq(rows.iter().map(|r| r.1[1]).collect());
        // levels keep their order of first appearance (ascending or descending)
        let mut levels: Vec<f64> = Vec::new();
        for r in &rows {
            if !levels.contains(&r.1[2]) {
                levels.push(r.1[2]);
            }
        }
        let dim = (times.len(), levels.len(), lats.len(), lons.len(), 3);
        let mut values = Array5::from_elem(dim, f64::NAN);
        let find = |xs: &[f64], x: f64| xs.iter().position(|&v| v == x).unwrap();
        for (t, n) in &rows {
            let it = times.binary_search(t).unwrap();
            let idx = (it, find(&levels, n[2]), find(&lats, n[0]), find(&lons, n[1]));
            for c in 0..3 {
                values[[idx.0, idx.1, idx.2, idx.3, c]] = n[3 + c];
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("baseline grid has missing combinations".into()));
        }
        Self::new(times, levels, lats, lons, values)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,lat,lon,level,u,v,w\n");
        for (it, &t) in self.times.iter().enumerate() {
            for (il, &level) in self.levels.iter().enumerate() {
                for (ia, &lat) in self.lats.iter().enumerate() {
                    for (io, &lon) in self.lons.iter().enumerate() {
                        let v = |c: usize| self.values[[it, il, ia, io, c]];
                        out.push_str(&format!("{},{lat},{lon},{level},{},{},{}\n", format_timestamp(t), v(0), v(1), v(2)));
                    }
                }
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Nearest-neighbour sampling of `baseline` at every truth entry (nearest
/// lat/lon grid point, nearest time, nearest level; no interpolation).
/// Truth times more than half a cadence outside the baseline span are left
/// unmatched.
pub fn match_gridded_baseline(baseline: &GriddedBaseline, truth: &WindCube) -> Result<WindCube> {
    let axis = *truth.axis();
    let half = baseline.cadence() / 2;
    let (first, last) = (baseline.times[0], *baseline.times.last().unwrap());
    let times: Vec<f64> = baseline.times.iter().map(|&t| t as f64).collect();
    let (nt, nl, ns, _) = truth.values().dim();
    let mut values = Array4::from_elem((nt, nl, ns, 3), f64::NAN);
    let mut mask = Array4::from_elem((nt, nl, ns, 3), false);
    let level_idx: Vec<usize> = truth.levels().values.iter().map(|&l| nearest(&baseline.levels, l)).collect();
    let cell_idx: Vec<(usize, usize)> = truth
        .stations()
        .entries()
        .iter()
        .map(|s| (nearest(&baseline.lats, s.lat), nearest(&baseline.lons, s.lon)))
        .collect();
    let mut matched = false;
    for t in 0..nt {
        let ts = axis.timestamp(t);
        if ts < first - half || ts > last + half {
            continue;
        }
        let it = nearest(&times, ts as f64);
        for (l, &il) in level_idx.iter().enumerate() {
            for (s, &(ia, io)) in cell_idx.iter().enumerate() {
                for c in 0..3 {
                    if truth.mask()[[t, l, s, c]] {
                        values[[t, l, s, c]] = baseline.values[[it, il, ia, io, c]];
                        mask[[t, l, s, c]] = true;
                        matched = true;
                    }
                }
            }
        }
    }
    if !matched {
        return Err(Error::NoTemporalOverlap);
    }
    WindCube::new(axis, truth.levels().clone(), truth.stations().clone(), values, mask)
}

pub fn compare_gridded_baseline(baseline: &GriddedBaseline, truth: &WindCube) -> Result<MetricReport> {
    let pred = match_gridded_baseline(baseline, truth)?;
    MetricReport::evaluate(&pred, truth, 0, None)
}

/// Per (level, component): spatial means of prediction and truth over the
/// stations observed in both, one row per timestamp. Returns `(file name, csv)`.
pub fn timeseries_tables(pred: &WindCube, truth: &WindCube) -> Result<Vec<(String, String)>> {
    if pred.axis() != truth.axis() || pred.levels() != truth.levels() || pred.stations() != truth.stations() {
        return Err(Error::Misaligned("prediction and truth cubes differ in axis, levels or stations".into()));
    }
    let (nt, nl, ns, _) = truth.values().dim();
    let mut tables = Vec::new();
    for l in 0..nl {
        for comp in COMPONENTS {
            let c = comp.index();
            let mut out = String::from("timestamp,pred,truth\n");
            for t in 0..nt {
                let both: Vec<usize> =
                    (0..ns).filter(|&s| pred.mask()[[t, l, s, c]] && truth.mask()[[t, l, s, c]]).collect();
                if both.is_empty() {
                    continue;
                }
                let n = both.len() as f64;
                let p = both.iter().map(|&s| pred.values()[[t, l, s, c]]).sum::<f64>() / n;
                let q = both.iter().map(|&s| truth.values()[[t, l, s, c]]).sum::<f64>() / n;
                out.push_str(&format!("{},{},{}\n", format_timestamp(truth.axis().timestamp(t)), fmt_sig9(p), fmt_sig9(q)));
            }
            tables.push((format!("timeseries_{}_{}.csv", truth.levels().label(l), comp.label()), out));
        }
    }
    Ok(tables)
}

pub fn emit_timeseries(pred: &WindCube, truth: &WindCube, dir: &Path) -> Result<Vec<PathBuf>> {
    timeseries_tables(pred, truth)?
        .into_iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            write_string(&p, &text)?;
            Ok(p)
        })
        .collect()
}

/// Writes the generated synthetic dataset under `dir`.
pub fn write_synthetic(dir: &Path, synth: &SynthConfig) -> Result<Vec<PathBuf>> {
    let d = generate(synth)?;
    let files = vec![dir.join("ztd.bin"), dir.join("wind.bin"), dir.join("ztd_stations.csv"), dir.join("wind_stations.csv")];
    write_panel_bin(&files[0], &d.ztd)?;
    write_cube_bin(&files[1], &d.wind)?;
    write_stations(&files[2], d.ztd.stations())?;
    write_stations(&files[3], d.wind.stations())?;
    Ok(files)
}
