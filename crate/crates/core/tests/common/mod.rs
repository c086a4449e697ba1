#![allow(dead_code)]

use chrono::{Duration, NaiveDateTime};
use loadcast::data::{parse_timestamp, RawSeries};
use loadcast::model::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn start() -> NaiveDateTime {
    parse_timestamp("2024-01-01T00:00:00").unwrap()
}

/// `y_t = sin(2πt/24) + noise·ε_t`, hourly timestamps.
pub fn noisy_sine(n: usize, noise: f64, phase: f64, seed: u64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = start();
    RawSeries {
        timestamps: (0..n).map(|i| t0 + Duration::hours(i as i64)).collect(),
        columns: vec!["load".into()],
        values: vec![(0..n)
            .map(|t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                Some((2.0 * std::f64::consts::PI * t as f64 / 24.0 + phase).sin() + noise * e)
            })
            .collect()],
        target: "load".into(),
    }
}

/// d_model 16, 2 heads, one encoder layer, one 32-unit LSTM layer, fc 32.
pub fn tiny_model(window_len: usize, dropout: f64, seed: u64) -> ModelConfig {
    ModelConfig {
        input_features: 1,
        window_len,
        horizon: 1,
        d_model: 16,
        n_encoder_layers: 1,
        n_heads: 2,
        d_ff: None,
        lstm_layers: 1,
        lstm_hidden: 32,
        fc_units: 32,
        dropout,
        layer_norm_eps: 1e-5,
        seed,
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
