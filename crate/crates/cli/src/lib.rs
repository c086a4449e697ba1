//! Batch workflows behind the `loadcast` binary.

pub mod config;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use loadcast::data::{
    format_timestamp, handle_missing, load_csv, parse_timestamp, prepare, prepare_with,
    zscore_apply, zscore_invert, NormalizationParams, PrepOptions, PreparedData, PreprocessSummary,
    SplitIndices, TimeSeriesFrame,
};
use loadcast::model::{Checkpoint, ModelParams};
use loadcast::persist::write_atomic;
use loadcast::train::{
    cross_validate, denormalized_predictions, evaluate, fit, recursive_forecast, PredictionRow,
};
use loadcast::tune::{tune_hyperparameters, write_trace_csv, TuneOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use config::RunConfig;

/// Error with the process exit code it maps to: 2 for bad input, 1 for internal failures.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<loadcast::Error> for CliError {
    fn from(e: loadcast::Error) -> Self {
        CliError {
            code: if e.is_user_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

const DATASET_VERSION: u32 = 1;

/// Preprocessed series as written by `preprocess`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetCache {
    format_version: u32,
    options: PrepOptions,
    timestamps: Vec<String>,
    columns: Vec<String>,
    target: String,
    /// Standardized values, one array per column.
    values: Vec<Vec<f64>>,
    normalization: NormalizationParams,
    row_splits: SplitIndices,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_cache(path: &Path) -> Result<PreparedData> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::user(format!("cannot read dataset cache {}: {e}", path.display()))
    })?;
    let c: DatasetCache = serde_json::from_str(&text)
        .map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
    if c.format_version != DATASET_VERSION {
        return Err(CliError::user(format!(
            "{}: dataset format version {} (expected {DATASET_VERSION})",
            path.display(),
            c.format_version
        )));
    }
    let timestamps = c
        .timestamps
        .iter()
        .map(|t| {
            parse_timestamp(t)
                .ok_or_else(|| CliError::user(format!("{}: bad timestamp '{t}'", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let target = c
        .columns
        .iter()
        .position(|n| *n == c.target)
        .ok_or_else(|| CliError::user(format!("{}: target column missing", path.display())))?;
    Ok(PreparedData {
        frame: TimeSeriesFrame {
            timestamps,
            columns: c.columns,
            values: c.values,
            target,
        },
        norm: c.normalization,
        row_splits: c.row_splits,
    })
}

/// Loads the series per the data section, from the cache when one is configured.
fn load_prepared(cfg: &RunConfig) -> Result<(PreparedData, Option<PreprocessSummary>)> {
    if let Some(cache) = &cfg.data.cache {
        return Ok((load_cache(cache)?, None));
    }
    let raw = load_csv(&cfg.data.csv, &cfg.data.target)?;
    let (data, summary) = prepare(&raw, &cfg.data.prep_options())?;
    Ok((data, Some(summary)))
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let raw = load_csv(&cfg.data.csv, &cfg.data.target)?;
    let opts = cfg.data.prep_options();
    let (data, summary) = prepare(&raw, &opts)?;
    let cache = DatasetCache {
        format_version: DATASET_VERSION,
        options: opts,
        timestamps: data.frame.timestamps.iter().map(format_timestamp).collect(),
        columns: data.frame.columns.clone(),
        target: data.frame.target_name().to_string(),
        values: data.frame.values.clone(),
        normalization: data.norm.clone(),
        row_splits: data.row_splits.clone(),
    };
    write_json(&cfg.output_dir.join("dataset.json"), &cache)?;
    write_json(&cfg.output_dir.join("preprocess_summary.json"), &summary)?;
    log::info!(
        "{} rows in, {} dropped, {} interpolated, {} clipped",
        summary.input_rows,
        summary.rows_dropped,
        summary.values_interpolated,
        summary.values_clipped
    );
    Ok(())
}

fn predictions_csv(frame: &TimeSeriesFrame, rows: &[PredictionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::internal(e.to_string());
    w.write_record(["timestamp", "actual", "predicted"])
        .map_err(err)?;
    for r in rows {
        let ts = frame
            .timestamps
            .get(r.row)
            .map(format_timestamp)
            .unwrap_or_default();
        w.write_record([ts, r.actual.to_string(), r.predicted.to_string()])
            .map_err(err)?;
    }
    String::from_utf8(
        w.into_inner()
            .map_err(|e| CliError::internal(e.to_string()))?,
    )
    .map_err(|e| CliError::internal(e.to_string()))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (data, _) = load_prepared(cfg)?;
    let windows = data.windows(cfg.data.window, cfg.data.horizon, cfg.data.stride)?;
    let model_cfg = cfg.model_config(data.frame.n_features());
    let params = ModelParams::init(&model_cfg)?;
    log::info!(
        "training {} parameters on {} / {} / {} windows",
        params.param_count(),
        windows.splits.train.len(),
        windows.splits.validation.len(),
        windows.splits.test.len()
    );
    let (best, mut report) = fit(
        params,
        &model_cfg,
        &windows.train()?,
        &windows.validation()?,
        &cfg.train,
    )?;
    let test = windows.test()?;
    report.test_metrics = Some(evaluate(&best, &model_cfg, &test, &data.norm)?);
    log::info!(
        "stopped after {} epochs ({:?}), best epoch {}, {:.1}s",
        report.epochs_run(),
        report.stop_reason,
        report.best_epoch,
        report.wall_time_secs
    );

    let out = &cfg.output_dir;
    let checkpoint = Checkpoint {
        config: model_cfg.clone(),
        normalization: data.norm.clone(),
        params: best,
    };
    checkpoint.save(&out.join("checkpoint.json"))?;
    log::info!("wrote {}", out.join("checkpoint.json").display());
    write_json(&out.join("train_report.json"), &report)?;
    write_json(
        &out.join("train_timing.json"),
        &json!({ "wall_time_secs": report.wall_time_secs }),
    )?;
    let rows = denormalized_predictions(&checkpoint.params, &model_cfg, &test, &data.norm)?;
    write_text(
        &out.join("predictions.csv"),
        &predictions_csv(&data.frame, &rows)?,
    )?;
    let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    write_text(
        &out.join("predictions.svg"),
        &svg::line_chart(&actual, &predicted),
    )?;
    Ok(())
}

/// Places tuned values into the config sections they belong to.
fn best_config_fragment(names: &[String], values: &[f64]) -> Value {
    let mut data = Map::new();
    let mut model = Map::new();
    let mut train = Map::new();
    for (name, &v) in names.iter().zip(values) {
        let int = || json!(v as u64);
        match name.as_str() {
            "learning_rate" => {
                train.insert(name.clone(), json!(v));
            }
            "batch_size" => {
                train.insert(name.clone(), int());
            }
            "dropout" => {
                model.insert(name.clone(), json!(v));
            }
            "window_len" => {
                data.insert("window".into(), int());
            }
            _ => {
                model.insert(name.clone(), int());
            }
        }
    }
    let mut root = Map::new();
    for (key, section) in [("data", data), ("model", model), ("train", train)] {
        if !section.is_empty() {
            root.insert(key.into(), Value::Object(section));
        }
    }
    Value::Object(root)
}

pub fn cmd_tune(cfg: &RunConfig) -> Result<()> {
    let (data, _) = load_prepared(cfg)?;
    let opts = TuneOptions {
        space: cfg.pso.space.clone(),
        budget_epochs: cfg.pso.budget_epochs,
        pso: cfg.pso.pso_config(),
        stride: cfg.data.stride,
    };
    let base = cfg.model_config(data.frame.n_features());
    log::info!(
        "tuning {} over {} particles x {} iterations, {} epochs per run",
        opts.space.names().join(", "),
        opts.pso.n_particles,
        opts.pso.t_max,
        opts.budget_epochs
    );
    let result = tune_hyperparameters(&data, &opts, &base, &cfg.train)?;
    let mut trace = Vec::new();
    write_trace_csv(&mut trace, &result.names, &result.search)?;
    write_atomic(&cfg.output_dir.join("tune_trace.csv"), &trace)?;
    write_json(
        &cfg.output_dir.join("best_config.json"),
        &best_config_fragment(&result.names, &result.search.best_params),
    )?;
    log::info!(
        "best validation RMSE {} after {} training runs",
        result.best_fitness,
        result.runs()
    );
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("checkpoint.json"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split: SplitChoice) -> Result<()> {
    let ck = Checkpoint::load(&checkpoint_path(cfg, checkpoint))?;
    let data = match &cfg.data.cache {
        Some(cache) => load_cache(cache)?,
        None => {
            let raw = load_csv(&cfg.data.csv, &cfg.data.target)?;
            prepare_with(&raw, &cfg.data.prep_options(), &ck.normalization)?
        }
    };
    let windows = data.windows(ck.config.window_len, ck.config.horizon, cfg.data.stride)?;
    let ds = match split {
        SplitChoice::Train => windows.train()?,
        SplitChoice::Validation => windows.validation()?,
        SplitChoice::Test => windows.test()?,
    };
    let report = evaluate(&ck.params, &ck.config, &ds, &ck.normalization)?;
    log::info!(
        "rmse {} mae {} smape {}% r2 {}",
        report.rmse,
        report.mae,
        report.smape,
        report.r2
    );
    write_json(&cfg.output_dir.join("metrics.json"), &report)
}

fn step_between(ts: &[NaiveDateTime]) -> Duration {
    match ts {
        [.., a, b] => *b - *a,
        _ => Duration::hours(1),
    }
}

pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    steps: usize,
) -> Result<()> {
    if steps == 0 {
        return Err(CliError::user("--steps must be >= 1"));
    }
    let ck = Checkpoint::load(&checkpoint_path(cfg, checkpoint))?;
    let path = input.unwrap_or(&cfg.data.csv);
    let raw = load_csv(path, &ck.normalization.target)?;
    let (frame, _) = handle_missing(
        &raw,
        cfg.data.max_missing_fraction,
        cfg.data.allow_excess_missing,
    )?;
    let l = ck.config.window_len;
    if frame.len() < l {
        return Err(CliError::user(format!(
            "{}: need at least {l} rows of context (the model's window length), found {}",
            path.display(),
            frame.len()
        )));
    }
    let z = zscore_apply(&frame, &ck.normalization)?;
    let context: Vec<Vec<f64>> = (frame.len() - l..frame.len())
        .map(|r| z.values.iter().map(|col| col[r]).collect())
        .collect();
    let target = ck.normalization.target_index()?;
    let normalized = recursive_forecast(&ck.params, &ck.config, &context, target, steps)?;
    let values = zscore_invert(&normalized, &ck.normalization, target);

    let step = step_between(&frame.timestamps);
    let last = *frame.timestamps.last().expect("non-empty frame");
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::internal(e.to_string());
    w.write_record(["timestamp", "predicted"]).map_err(err)?;
    for (i, v) in values.iter().enumerate() {
        let ts = last + step * (i as i32 + 1);
        w.write_record([format_timestamp(&ts), v.to_string()])
            .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::internal(e.to_string()))?;
    write_atomic(&cfg.output_dir.join("forecast.csv"), &bytes)?;
    log::info!("wrote {}", cfg.output_dir.join("forecast.csv").display());
    Ok(())
}

pub fn cmd_crossval(cfg: &RunConfig, k: usize) -> Result<()> {
    let (data, _) = load_prepared(cfg)?;
    let windows = data.all_windows(cfg.data.window, cfg.data.horizon, cfg.data.stride)?;
    let model_cfg = cfg.model_config(data.frame.n_features());
    let report = cross_validate(&windows, k, &model_cfg, &cfg.train, &data.norm)?;
    log::info!(
        "{k}-fold rmse {} ± {}, r2 {} ± {}",
        report.mean.rmse,
        report.std.rmse,
        report.mean.r2,
        report.std.r2
    );
    write_json(&cfg.output_dir.join("crossval_report.json"), &report)
}
