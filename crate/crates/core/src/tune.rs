//! Hyperparameter tuning: each particle position is decoded into model and
//! training settings, a fresh model is trained for a fixed epoch budget, and
//! its validation RMSE (original units) is the fitness.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::metrics::{rmse, PredictionSet};
use crate::model::{ModelConfig, ModelParams};
use crate::pso::{optimize, Dim, EvalContext, Kind, PsoConfig, PsoResult, RngStream, SearchSpace};
use crate::train::{denormalized_predictions, fit, mix_seed, TrainConfig};

/// Names accepted as search dimensions, with whether they are integer-valued.
pub const TUNABLE: [(&str, bool); 7] = [
    ("learning_rate", false),
    ("dropout", false),
    ("lstm_hidden", true),
    ("window_len", true),
    ("fc_units", true),
    ("batch_size", true),
    ("lstm_layers", true),
];

pub fn default_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            Dim::log("learning_rate", 1e-4, 1e-2),
            Dim::linear("dropout", 0.0, 0.6),
            Dim::log("lstm_hidden", 16.0, 256.0).integer(),
            Dim::linear("window_len", 12.0, 96.0).integer(),
        ],
    }
}

pub fn validate_space(space: &SearchSpace) -> Result<()> {
    space.validate()?;
    for d in &space.dims {
        let Some((_, integer)) = TUNABLE.iter().find(|(n, _)| *n == d.name) else {
            let known: Vec<&str> = TUNABLE.iter().map(|(n, _)| *n).collect();
            return Err(Error::Config(format!(
                "unknown search dimension '{}' (known: {})",
                d.name,
                known.join(", ")
            )));
        };
        if *integer && d.kind != Kind::Integer {
            return Err(Error::Config(format!(
                "search dimension '{}' must be declared integer",
                d.name
            )));
        }
        if d.name == "dropout" && d.upper >= 1.0 {
            return Err(Error::Config("dropout upper bound must be < 1".into()));
        }
        if *integer && d.lower < 1.0 {
            return Err(Error::Config(format!(
                "search dimension '{}' must be >= 1",
                d.name
            )));
        }
    }
    Ok(())
}

/// Applies decoded values (in `space` order) to copies of the base configs.
pub fn apply_params(
    space: &SearchSpace,
    values: &[f64],
    model: &ModelConfig,
    train: &TrainConfig,
) -> (ModelConfig, TrainConfig) {
    let mut m = model.clone();
    let mut t = train.clone();
    for (d, &v) in space.dims.iter().zip(values) {
        match d.name.as_str() {
            "learning_rate" => t.learning_rate = v,
            "dropout" => m.dropout = v,
            "lstm_hidden" => m.lstm_hidden = v as usize,
            "window_len" => m.window_len = v as usize,
            "fc_units" => m.fc_units = v as usize,
            "batch_size" => t.batch_size = v as usize,
            "lstm_layers" => m.lstm_layers = v as usize,
            _ => {}
        }
    }
    (m, t)
}

/// Trains `model`/`train` for `budget` epochs and returns the validation RMSE
/// in original units.
pub fn budgeted_fitness(
    data: &PreparedData,
    stride: usize,
    model: &ModelConfig,
    train: &TrainConfig,
    budget: usize,
) -> Result<f64> {
    let windows = data.windows(model.window_len, model.horizon, stride)?;
    let tc = TrainConfig {
        max_epochs: budget,
        patience: train.patience.min(budget),
        ..train.clone()
    };
    let cfg = ModelConfig {
        input_features: windows.windows.n_features(),
        ..model.clone()
    };
    let val = windows.validation()?;
    let (best, _) = fit(ModelParams::init(&cfg)?, &cfg, &windows.train()?, &val, &tc)?;
    let rows = denormalized_predictions(&best, &cfg, &val, &data.norm)?;
    let y: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    Ok(rmse(&PredictionSet::new(&y, &p)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub space: SearchSpace,
    pub budget_epochs: usize,
    pub pso: PsoConfig,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub best_fitness: f64,
    pub search: PsoResult,
    pub names: Vec<String>,
}

impl TuneResult {
    /// Best fitness among the initial population.
    pub fn initial_best(&self) -> f64 {
        self.search.gbest_trace[0]
    }

    /// Number of training runs launched.
    pub fn runs(&self) -> usize {
        self.search.evaluations.len()
    }
}

/// Runs the swarm. Each evaluation is seeded from the swarm seed, the particle
/// id and the iteration; failed runs score `+∞`.
pub fn tune_hyperparameters(
    data: &PreparedData,
    opts: &TuneOptions,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
) -> Result<TuneResult> {
    validate_space(&opts.space)?;
    if opts.budget_epochs == 0 {
        return Err(Error::Config("tune budget must be >= 1 epoch".into()));
    }
    let objective = |ctx: EvalContext, values: &[f64]| -> f64 {
        let (mut m, mut t) = apply_params(&opts.space, values, base_model, base_train);
        let ids = [ctx.particle as u64, ctx.iteration as u64];
        m.seed = mix_seed(opts.pso.seed, &[ids[0], ids[1], 0]);
        t.seed = mix_seed(opts.pso.seed, &[ids[0], ids[1], 1]);
        match budgeted_fitness(data, opts.stride, &m, &t, opts.budget_epochs) {
            Ok(f) if f.is_finite() => f,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                log::warn!(
                    "particle {} iteration {}: {e}; scoring +inf",
                    ctx.particle,
                    ctx.iteration
                );
                f64::INFINITY
            }
        }
    };
    let mut rng = RngStream::seeded(opts.pso.seed);
    let search = optimize(objective, &opts.space, &opts.pso, &mut rng)?;
    let (model, train) = apply_params(&opts.space, &search.best_params, base_model, base_train);
    Ok(TuneResult {
        model,
        train,
        best_fitness: search.best_fitness,
        names: opts.space.names().iter().map(|s| s.to_string()).collect(),
        search,
    })
}

/// One row per evaluation: iteration, particle_id, fitness, decoded
/// dimensions, then the global best after that iteration.
pub fn write_trace_csv(out: impl Write, names: &[String], result: &PsoResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Malformed {
        path: "tune trace".into(),
        message: e.to_string(),
    };
    let mut header = vec![
        "iteration".to_string(),
        "particle_id".into(),
        "fitness".into(),
    ];
    header.extend(names.iter().cloned());
    header.push("gbest".into());
    w.write_record(&header).map_err(to_err)?;
    for e in &result.evaluations {
        let mut rec = vec![
            e.iteration.to_string(),
            e.particle.to_string(),
            e.fitness.to_string(),
        ];
        rec.extend(e.params.iter().map(f64::to_string));
        rec.push(e.gbest.to_string());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::io(Path::new("tune trace"), e))?;
    Ok(())
}
