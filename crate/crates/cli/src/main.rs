//! `gwindcast` command-line front end.
//!
//! Every subcommand reads one JSON experiment config (`--config`, optional)
//! and accepts `--dotted.key=value` overrides for any field, e.g.
//! `--train.max_epochs=20` or `--data.synth.n_steps=1000`. Values are parsed as
//! JSON when possible and taken as strings otherwise.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gwindcast::calibrate::CdfMap;
use gwindcast::harness::{
    self, build_run_samples, calibrate_stage, compare_gridded_baseline, emit_timeseries, evaluate_stage, load_dataset,
    load_raw, model_config, predict_stage, read_dataset, run_lead_sweep, run_station_ablation, train_stage,
    write_dataset, write_manifest, write_synthetic, DataSource, ExperimentConfig, GriddedBaseline,
};
use gwindcast::io::{read_cube_bin, write_cube_bin, write_json};
use gwindcast::model::Model;
use gwindcast::trainer::write_history;
use gwindcast::{Error, ErrorKind, Split};
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "gwindcast", version, about = "GNSS ZTD to 3-D wind retrieval and nowcasting")]
struct Cli {
    /// Experiment config (JSON). Defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset into <output_dir>/synth
    Synth,
    /// Gap-fill and align the configured data into <output_dir>/preprocessed
    Preprocess,
    /// Train one model for `lead` from the preprocessed data
    Train,
    /// Fit the CDF map for the trained single-run model
    Calibrate,
    /// Write raw and calibrated test predictions for the single run
    Predict,
    /// Score the single-run predictions on the test split
    Evaluate,
    /// Train and score one model per lead time
    RunLeadSweep,
    /// Retrain on the k nearest stations for each station count
    RunStationAblation,
    /// Score a gridded baseline against the wind observations
    CompareBaseline,
    /// Write spatially averaged prediction/truth series per level and component
    EmitTimeseries,
}

/// Splits `--a.b=value` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        match arg.strip_prefix("--").and_then(|a| a.split_once('=')) {
            Some((key, value)) if key != "config" => overrides.push((key.to_string(), value.to_string())),
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--{key}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key --{key}")))
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, Error> {
    let base: ExperimentConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for (key, raw) in overrides {
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        set_path(&mut value, key, parsed)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn predictions_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.predictions.clone().unwrap_or_else(|| cfg.run_dir().join("predictions.bin"))
}

fn run(command: Command, cfg: &ExperimentConfig) -> Result<(), Error> {
    let out = &cfg.output_dir;
    match command {
        Command::Synth => {
            let DataSource::Synthetic { synth } = &cfg.data else {
                return Err(Error::Config("synth needs data.kind = \"synthetic\"".into()));
            };
            for p in write_synthetic(&out.join("synth"), synth)? {
                println!("{}", p.display());
            }
        }
        Command::Preprocess => {
            let data = harness::preprocess(load_raw(&cfg.data)?, cfg)?;
            let dir = cfg.preprocessed_dir();
            write_dataset(&dir, &data)?;
            write_manifest(&dir, "preprocess", cfg, &data.digests)?;
            print_json(&data.gap_report)?;
        }
        Command::Train => {
            let data = read_dataset(&cfg.preprocessed_dir())?;
            let set = build_run_samples(cfg, &data, cfg.lead, None)?;
            let trained = train_stage(cfg, &set, cfg.lead)?;
            let dir = cfg.run_dir();
            trained.model.save(&dir.join("model"))?;
            write_history(&dir.join("history.csv"), &trained.history)?;
            println!("best epoch {} of {}", trained.best_epoch, trained.history.len());
        }
        Command::Calibrate => {
            let data = read_dataset(&cfg.preprocessed_dir())?;
            let set = build_run_samples(cfg, &data, cfg.lead, None)?;
            let model = Model::load_expecting(&cfg.run_dir().join("model"), &model_config(cfg, &set))?;
            calibrate_stage(cfg, &model, &set)?.save(&cfg.run_dir().join("cdf_map.json"))?;
        }
        Command::Predict => {
            let data = read_dataset(&cfg.preprocessed_dir())?;
            let set = build_run_samples(cfg, &data, cfg.lead, None)?;
            let dir = cfg.run_dir();
            let model = Model::load_expecting(&dir.join("model"), &model_config(cfg, &set))?;
            let cdf = CdfMap::load(&dir.join("cdf_map.json"))?;
            let (raw, calibrated) = predict_stage(&model, &cdf, &set)?;
            write_cube_bin(&dir.join("predictions_raw.bin"), &raw)?;
            write_cube_bin(&dir.join("predictions.bin"), &calibrated)?;
        }
        Command::Evaluate => {
            let data = read_dataset(&cfg.preprocessed_dir())?;
            let set = build_run_samples(cfg, &data, cfg.lead, None)?;
            let pred = read_cube_bin(&predictions_path(cfg))?;
            let report = evaluate_stage(&pred, &set, cfg.lead, None)?;
            write_json(&cfg.run_dir().join("metrics.json"), &report)?;
            print_json(&report.summary)?;
        }
        Command::RunLeadSweep => {
            let data = load_dataset(cfg)?;
            let sweep = run_lead_sweep(cfg, &data)?;
            for run in &sweep.runs {
                print_json(&run.report.summary)?;
            }
        }
        Command::RunStationAblation => {
            let data = load_dataset(cfg)?;
            let ablation = run_station_ablation(cfg, &data)?;
            print!("{}", harness::station_metrics_csv(&ablation.rows));
        }
        Command::CompareBaseline => {
            let path = cfg.baseline.as_ref().ok_or_else(|| Error::Config("compare-baseline needs `baseline`".into()))?;
            let baseline = GriddedBaseline::read(path)?;
            let data = load_dataset(cfg)?;
            let report = compare_gridded_baseline(&baseline, &data.wind)?;
            write_json(&out.join("baseline").join("metrics.json"), &report)?;
            print_json(&report.summary)?;
        }
        Command::EmitTimeseries => {
            let data = read_dataset(&cfg.preprocessed_dir())?;
            let set = build_run_samples(cfg, &data, cfg.lead, None)?;
            let pred = read_cube_bin(&predictions_path(cfg))?;
            let truth = set.targets_cube(&set.indices(Split::Test))?;
            for p in emit_timeseries(&pred, &truth, &cfg.run_dir().join("timeseries"))? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = load_config(cli.config.as_deref(), &overrides).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
