//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Each export returns plain data (JSON text or a `Float64Array`) so the page
//! needs no bundler or JS glue beyond what `wasm-bindgen --target web` emits.

use chrono::Duration;
use loadcast::data::{parse_timestamp, prepare, zscore_invert, PrepOptions, RawSeries};
use loadcast::model::{ModelConfig, ModelParams};
use loadcast::pso::{optimize, rastrigin, sphere, PsoConfig, RngStream, SearchSpace};
use loadcast::train::{denormalized_predictions, fit, recursive_forecast, TrainConfig};
use loadcast::transformer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: loadcast::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Runs a 2-D swarm on `"sphere"` or `"rastrigin"` over [-5.12, 5.12]².
///
/// Returns `{"evaluations": [{iteration, particle, x, y, fitness, gbest}], "best": [x, y], "best_fitness"}`.
#[wasm_bindgen]
pub fn pso_run(
    objective: &str,
    n_particles: usize,
    t_max: usize,
    w_max: f64,
    w_min: f64,
    seed: u32,
) -> Result<String, JsError> {
    swarm_json(objective, n_particles, t_max, w_max, w_min, seed).map_err(js)
}

pub fn swarm_json(
    objective: &str,
    n_particles: usize,
    t_max: usize,
    w_max: f64,
    w_min: f64,
    seed: u32,
) -> loadcast::Result<String> {
    let f: fn(&[f64]) -> f64 = match objective {
        "sphere" => sphere,
        "rastrigin" => rastrigin,
        other => {
            return Err(loadcast::Error::Config(format!(
                "unknown objective '{other}' (expected sphere or rastrigin)"
            )))
        }
    };
    let space = SearchSpace::uniform_box(2, -5.12, 5.12)?;
    let cfg = PsoConfig {
        n_particles,
        t_max,
        w_max,
        w_min,
        seed: seed as u64,
        ..PsoConfig::default()
    };
    let mut rng = RngStream::seeded(cfg.seed);
    let result = optimize(|_, x| f(x), &space, &cfg, &mut rng)?;
    let evaluations: Vec<_> = result
        .evaluations
        .iter()
        .map(|e| {
            json!({
                "iteration": e.iteration,
                "particle": e.particle,
                "x": e.params[0],
                "y": e.params[1],
                "fitness": e.fitness,
                "gbest": e.gbest,
            })
        })
        .collect();
    Ok(json!({
        "evaluations": evaluations,
        "best": result.best_params,
        "best_fitness": result.best_fitness,
    })
    .to_string())
}

/// Sinusoidal position table, row-major `[len × d_model]`.
#[wasm_bindgen]
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Vec<f64>, JsError> {
    transformer::positional_encoding(len, d_model)
        .map(|t| t.table.data().to_vec())
        .map_err(js)
}

/// Trains a small forecaster on a synthetic daily-cycle series, then rolls it forward.
///
/// Returns `{"series", "test_start", "test_predicted", "forecast", "train_loss", "val_loss", "rmse"}`;
/// `series` is the raw signal and `test_predicted` lines up with `series[test_start..]`.
#[wasm_bindgen]
pub fn forecast_demo(
    seed: u32,
    noise: f64,
    epochs: usize,
    steps: usize,
) -> Result<String, JsError> {
    forecast_json(seed, noise, epochs, steps).map_err(js)
}

const DEMO_POINTS: usize = 360;
const DEMO_WINDOW: usize = 24;

pub fn synthetic_series(seed: u32, noise: f64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let t0 = parse_timestamp("2024-01-01T00:00:00").expect("literal timestamp");
    let values = (0..DEMO_POINTS)
        .map(|t| {
            let day = (std::f64::consts::TAU * t as f64 / 24.0).sin();
            let week = 0.3 * (std::f64::consts::TAU * t as f64 / 168.0).sin();
            let e: f64 = rng.gen_range(-1.0..1.0);
            Some(10.0 + 3.0 * day + week + noise * e)
        })
        .collect();
    RawSeries {
        timestamps: (0..DEMO_POINTS)
            .map(|i| t0 + Duration::hours(i as i64))
            .collect(),
        columns: vec!["load".into()],
        values: vec![values],
        target: "load".into(),
    }
}

pub fn forecast_json(
    seed: u32,
    noise: f64,
    epochs: usize,
    steps: usize,
) -> loadcast::Result<String> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(loadcast::Error::Config(
            "noise must be finite and >= 0".into(),
        ));
    }
    let raw = synthetic_series(seed, noise);
    let (data, _) = prepare(&raw, &PrepOptions::default())?;
    let windows = data.windows(DEMO_WINDOW, 1, 1)?;
    let cfg = ModelConfig {
        input_features: 1,
        window_len: DEMO_WINDOW,
        horizon: 1,
        d_model: 16,
        n_encoder_layers: 1,
        n_heads: 2,
        d_ff: None,
        lstm_layers: 1,
        lstm_hidden: 16,
        fc_units: 16,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
        seed: seed as u64,
    };
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        max_epochs: epochs,
        patience: epochs.clamp(1, 10),
        seed: seed as u64,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&cfg)?;
    let (best, report) = fit(params, &cfg, &windows.train()?, &windows.validation()?, &tc)?;

    let test = windows.test()?;
    let rows = denormalized_predictions(&best, &cfg, &test, &data.norm)?;
    let test_start = rows.first().map(|r| r.row).unwrap_or(DEMO_POINTS);
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let sq: f64 = rows.iter().map(|r| (r.actual - r.predicted).powi(2)).sum();
    let rmse = (sq / rows.len().max(1) as f64).sqrt();

    let n = data.frame.len();
    let context: Vec<Vec<f64>> = (n - DEMO_WINDOW..n)
        .map(|r| data.frame.values.iter().map(|c| c[r]).collect())
        .collect();
    let ahead = recursive_forecast(&best, &cfg, &context, 0, steps)?;
    let series: Vec<f64> = raw.values[0]
        .iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    Ok(json!({
        "series": series,
        "test_start": test_start,
        "test_predicted": predicted,
        "forecast": zscore_invert(&ahead, &data.norm, 0),
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
        "rmse": rmse,
    })
    .to_string())
}
