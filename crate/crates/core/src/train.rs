//! Training: MSE objective, Adam, seeded mini-batching, early stopping with
//! best-epoch restoration, evaluation, fine-tuning and K-fold orchestration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{kfold, zscore_invert, NormalizationParams, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport, PredictionSet};
use crate::model::{forward_on_tape, predict, Checkpoint, ModelConfig, ModelParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 500,
            patience: 10,
            min_delta: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be >= 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        Ok(())
    }
}

// No monotonic clock in std on the browser target, so timing reads zero there.
struct Stopwatch(#[cfg(not(target_family = "wasm"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_family = "wasm"))]
            std::time::Instant::now(),
        )
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_family = "wasm"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_family = "wasm")]
        return 0.0;
    }
}

/// Mixes a base seed with extra identifiers (splitmix64 finalizer per part).
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(splitmix(base), |acc, p| splitmix(acc ^ splitmix(*p)))
}

/// First and second moments in canonical parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter changes, so a non-finite gradient leaves the state untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    tc: &TrainConfig,
) -> Result<()> {
    let names = params.names();
    if grads.len() != names.len() || state.m.len() != names.len() {
        return Err(Error::dim("adam_step", &[names.len()], &[grads.len()]));
    }
    for (name, g) in names.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2) = (tc.adam_beta1, tc.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut i = 0;
    params.visit_mut(&mut |_, p| {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            *pj -= tc.learning_rate * m_hat / (v_hat.sqrt() + tc.adam_eps);
        }
        i += 1;
    });
    Ok(())
}

/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    /// Strictly lowest loss so far; the caller should snapshot parameters.
    pub new_best: bool,
    /// Improved the reference by at least `min_delta`.
    pub improved: bool,
    pub stop: bool,
}

/// Patience counter. An epoch counts as an improvement when it is strictly
/// below the reference loss and by at least `min_delta`; only improvements
/// reset patience.
/// The best loss (for weight restoration) is the strict minimum seen.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    reference: f64,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            reference: f64::INFINITY,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// `epoch` is 1-based.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        let improved = loss < self.reference && self.reference - loss >= self.min_delta;
        if improved {
            self.reference = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let new_best = loss < self.best_loss;
        if new_best {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        Observation {
            new_best,
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub optimizer_steps: u64,
    /// Filled in by callers that hold a test split.
    pub test_metrics: Option<MetricsReport>,
    /// Not serialized, so reports from identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

const EVAL_CHUNK: usize = 256;

/// Inference-mode predictions `[N × H]` on the normalized scale.
pub fn predict_dataset(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &WindowedDataset,
) -> Result<Tensor> {
    let mut out = Vec::with_capacity(ds.len() * ds.horizon);
    let mut start = 0;
    while start < ds.len() {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let chunk = ds.select_range(start..end)?;
        out.extend_from_slice(predict(&chunk.inputs, params, cfg)?.data());
        start = end;
    }
    Tensor::new(vec![ds.len(), ds.horizon], out)
}

/// Mean squared error on the normalized scale, inference mode.
pub fn mse(params: &ModelParams, cfg: &ModelConfig, ds: &WindowedDataset) -> Result<f64> {
    let pred = predict_dataset(params, cfg, ds)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(ds.targets.data())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

fn check_compatible(cfg: &ModelConfig, ds: &WindowedDataset) -> Result<()> {
    let pairs = [
        ("input_features", cfg.input_features, ds.n_features()),
        ("window_len", cfg.window_len, ds.window_len),
        ("horizon", cfg.horizon, ds.horizon),
    ];
    for (field, expected, found) in pairs {
        if expected != found {
            return Err(Error::Incompatible {
                field: field.into(),
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    Ok(())
}

/// Trains from `params` and returns the parameters of the best validation epoch.
pub fn fit(
    params: ModelParams,
    cfg: &ModelConfig,
    train: &WindowedDataset,
    validation: &WindowedDataset,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    tc.validate()?;
    cfg.validate()?;
    check_compatible(cfg, train)?;
    check_compatible(cfg, validation)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            found: 0,
        });
    }
    let started = Stopwatch::start();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut params = params;
    let mut best = params.clone();
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(tc.patience, tc.min_delta);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(tc.batch_size).enumerate() {
            let batch = train.select(idx)?;
            let mut tape = Tape::new();
            let pv = params.on_tape(&mut tape);
            let pred = forward_on_tape(&mut tape, &batch.inputs, &pv, cfg, &mut rng, true)?;
            let loss = tape.mse_loss(pred, &batch.targets)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    epoch,
                    batch: b + 1,
                });
            }
            total += lv * idx.len() as f64;
            let mut g = tape.backward(loss)?;
            let mut grads = Vec::new();
            pv.map(&mut |_, v| grads.push(g.take_or_zeros(*v, tape.value(*v))));
            adam_step(&mut params, &grads, &mut adam, tc)?;
        }
        let tl = total / train.len() as f64;
        let vl = mse(&params, cfg, validation)?;
        if !vl.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss".into(),
                epoch,
                batch: 0,
            });
        }
        train_loss.push(tl);
        val_loss.push(vl);
        log::debug!("epoch {epoch}: train {tl:.6} val {vl:.6}");
        let obs = stopper.observe(epoch, vl);
        if obs.new_best {
            best = params.clone();
        }
        if obs.stop && epoch < tc.max_epochs {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    Ok((
        best,
        TrainReport {
            train_loss,
            val_loss,
            best_epoch: stopper.best_epoch(),
            best_val_loss: stopper.best_loss(),
            stop_reason,
            optimizer_steps: adam.t,
            test_metrics: None,
            wall_time_secs: started.secs(),
        },
    ))
}

/// One denormalized prediction: window `window`, horizon step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub window: usize,
    pub step: usize,
    /// Frame row of the predicted value.
    pub row: usize,
    pub actual: f64,
    pub predicted: f64,
}

/// Predictions and actuals mapped back to the target column's original units.
pub fn denormalized_predictions(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &WindowedDataset,
    norm: &NormalizationParams,
) -> Result<Vec<PredictionRow>> {
    let target = norm.target_index()?;
    let pred = predict_dataset(params, cfg, ds)?;
    let p = zscore_invert(pred.data(), norm, target);
    let y = zscore_invert(ds.targets.data(), norm, target);
    let h = ds.horizon;
    Ok((0..p.len())
        .map(|i| PredictionRow {
            window: i / h,
            step: i % h,
            row: ds.source_rows[i / h] + ds.window_len + i % h,
            actual: y[i],
            predicted: p[i],
        })
        .collect())
}

/// Rolls the model forward `steps` values past `context` (normalized rows,
/// `[L][F]`, oldest first). Each pass predicts `H` target values, which are
/// appended as new rows; non-target features repeat their last observed value.
pub fn recursive_forecast(
    params: &ModelParams,
    cfg: &ModelConfig,
    context: &[Vec<f64>],
    target: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let (l, f) = (cfg.window_len, cfg.input_features);
    if context.len() < l {
        return Err(Error::InsufficientData {
            required: l,
            found: context.len(),
        });
    }
    if target >= f || context.iter().any(|r| r.len() != f) {
        return Err(Error::dim(
            "recursive_forecast",
            &[context.len(), f],
            &[target],
        ));
    }
    let mut window: Vec<Vec<f64>> = context[context.len() - l..].to_vec();
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let x = Tensor::new(vec![1, l, f], window.concat())?;
        let pred = predict(&x, params, cfg)?;
        for &v in pred.data().iter().take(steps - out.len()) {
            let mut row = window.last().expect("non-empty window").clone();
            row[target] = v;
            window.remove(0);
            window.push(row);
            out.push(v);
        }
    }
    Ok(out)
}

/// Metrics on the original scale.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &WindowedDataset,
    norm: &NormalizationParams,
) -> Result<MetricsReport> {
    let rows = denormalized_predictions(params, cfg, ds, norm)?;
    let y: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    metrics::report(&PredictionSet::new(&y, &p)?)
}

/// Continues training a checkpoint on new data with a fresh optimizer state.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    train: &WindowedDataset,
    validation: &WindowedDataset,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    check_compatible(&checkpoint.config, train)?;
    check_compatible(&checkpoint.config, validation)?;
    fit(
        checkpoint.params.clone(),
        &checkpoint.config,
        train,
        validation,
        tc,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rmse: f64,
    pub mae: f64,
    pub smape_percent: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsSummary,
    /// Population standard deviation over folds.
    pub std: MetricsSummary,
}

/// Fraction of each fold's training windows held back (from its end) for early stopping.
pub const CV_VALIDATION_FRACTION: f64 = 0.2;

fn summarize(folds: &[MetricsReport]) -> (MetricsSummary, MetricsSummary) {
    let stat = |get: &dyn Fn(&MetricsReport) -> f64| {
        let n = folds.len() as f64;
        let mean = folds.iter().map(get).sum::<f64>() / n;
        let var = folds.iter().map(|f| (get(f) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (rm, rs) = stat(&|f| f.rmse);
    let (am, as_) = stat(&|f| f.mae);
    let (sm, ss) = stat(&|f| f.smape);
    let (qm, qs) = stat(&|f| f.r2);
    (
        MetricsSummary {
            rmse: rm,
            mae: am,
            smape_percent: sm,
            r2: qm,
        },
        MetricsSummary {
            rmse: rs,
            mae: as_,
            smape_percent: ss,
            r2: qs,
        },
    )
}

/// Blocked K-fold over `windows`. Each fold trains a freshly initialized model
/// (seeds mixed with the fold index) and is scored on its held-out block.
pub fn cross_validate(
    windows: &WindowedDataset,
    k: usize,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    norm: &NormalizationParams,
) -> Result<CrossValReport> {
    let folds = kfold(windows.len(), k)?;
    let run =
        |(j, (train_idx, test_idx)): (usize, &(Vec<usize>, Vec<usize>))| -> Result<MetricsReport> {
            let n_val = ((train_idx.len() as f64 * CV_VALIDATION_FRACTION).floor() as usize).max(1);
            if n_val >= train_idx.len() {
                return Err(Error::InsufficientData {
                    required: 2,
                    found: train_idx.len(),
                });
            }
            let split = train_idx.len() - n_val;
            let fit_set = windows.select(&train_idx[..split])?;
            let val_set = windows.select(&train_idx[split..])?;
            let test_set = windows.select(test_idx)?;
            let fold_cfg = ModelConfig {
                seed: mix_seed(cfg.seed, &[j as u64]),
                ..cfg.clone()
            };
            let fold_tc = TrainConfig {
                seed: mix_seed(tc.seed, &[j as u64]),
                ..tc.clone()
            };
            let init = ModelParams::init(&fold_cfg)?;
            let (best, _) = fit(init, &fold_cfg, &fit_set, &val_set, &fold_tc)?;
            evaluate(&best, &fold_cfg, &test_set, norm)
        };
    #[cfg(feature = "parallel")]
    let reports: Vec<MetricsReport> = {
        use rayon::prelude::*;
        folds
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let reports: Vec<MetricsReport> = folds.iter().enumerate().map(run).collect::<Result<_>>()?;
    let (mean, std) = summarize(&reports);
    Ok(CrossValReport {
        k,
        folds: reports,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, TimeSeriesFrame};

    pub(crate) fn tiny_cfg(window_len: usize) -> ModelConfig {
        ModelConfig {
            window_len,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            lstm_layers: 1,
            lstm_hidden: 8,
            fc_units: 8,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn sine_windows(n: usize, window_len: usize) -> WindowedDataset {
        let t0 = crate::data::parse_timestamp("2024-01-01T00:00:00").unwrap();
        let frame = TimeSeriesFrame {
            timestamps: (0..n)
                .map(|i| t0 + chrono::Duration::hours(i as i64))
                .collect(),
            columns: vec!["y".into()],
            values: vec![(0..n)
                .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 12.0).sin())
                .collect()],
            target: 0,
        };
        make_windows(&frame, window_len, 1, 1).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 600,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = tiny_cfg(4);
        let mut p = ModelParams::init(&cfg).unwrap();
        let before = p.clone();
        let grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let cfg = tiny_cfg(4);
        let mut p = ModelParams::init(&cfg).unwrap();
        let before = p.clone();
        let mut grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        grads[3].data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &grads, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains(&p.names()[3]), "{err}");
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn early_stopping_constant_trace() {
        let mut es = EarlyStopping::new(3, 1e-4);
        let stops: Vec<bool> = (1..=6).map(|e| es.observe(e, 1.0).stop).collect();
        assert_eq!(stops, [false, false, false, true, true, true]);
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn early_stopping_small_gains_do_not_reset_patience() {
        let mut es = EarlyStopping::new(2, 0.1);
        assert!(!es.observe(1, 1.0).stop);
        let o = es.observe(2, 0.95);
        assert!(o.new_best && !o.improved && !o.stop);
        assert!(es.observe(3, 0.94).stop);
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn mix_seed_separates_inputs() {
        assert_ne!(mix_seed(1, &[0]), mix_seed(1, &[1]));
        assert_ne!(mix_seed(1, &[0, 1]), mix_seed(1, &[1, 0]));
        assert_eq!(mix_seed(5, &[2, 3]), mix_seed(5, &[2, 3]));
    }

    #[test]
    fn fit_counts_steps_and_restores_best() {
        let cfg = tiny_cfg(6);
        let ds = sine_windows(60, 6);
        let train = ds.select_range(0..40).unwrap();
        let val = ds.select_range(40..ds.len()).unwrap();
        let tc = TrainConfig {
            batch_size: 16,
            max_epochs: 5,
            patience: 5,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let (best, report) =
            fit(ModelParams::init(&cfg).unwrap(), &cfg, &train, &val, &tc).unwrap();
        assert_eq!(report.optimizer_steps, 3 * report.epochs_run() as u64);
        let min = report
            .val_loss
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, min);
        assert_eq!(mse(&best, &cfg, &val).unwrap(), min);

        let (again, report2) =
            fit(ModelParams::init(&cfg).unwrap(), &cfg, &train, &val, &tc).unwrap();
        assert_eq!(best, again);
        assert_eq!(report.val_loss, report2.val_loss);
    }

    #[test]
    fn recursive_forecast_feeds_back_predictions() {
        let cfg = ModelConfig {
            horizon: 2,
            ..tiny_cfg(4)
        };
        let params = ModelParams::init(&cfg).unwrap();
        let ctx: Vec<Vec<f64>> = (0..6).map(|i| vec![(i as f64 * 0.3).sin()]).collect();
        let once = recursive_forecast(&params, &cfg, &ctx, 0, 2).unwrap();
        let x = Tensor::new(vec![1, 4, 1], ctx[2..].concat()).unwrap();
        assert_eq!(once, predict(&x, &params, &cfg).unwrap().data());

        let twice = recursive_forecast(&params, &cfg, &ctx, 0, 4).unwrap();
        assert_eq!(&twice[..2], &once[..]);
        let second =
            Tensor::new(vec![1, 4, 1], vec![ctx[4][0], ctx[5][0], once[0], once[1]]).unwrap();
        assert_eq!(&twice[2..], predict(&second, &params, &cfg).unwrap().data());

        assert!(recursive_forecast(&params, &cfg, &ctx[..3], 0, 1).is_err());
    }

    #[test]
    fn fine_tune_rejects_mismatched_features() {
        let cfg = ModelConfig {
            input_features: 2,
            ..tiny_cfg(6)
        };
        let ck = Checkpoint {
            params: ModelParams::init(&cfg).unwrap(),
            config: cfg,
            normalization: NormalizationParams {
                columns: vec!["a".into(), "y".into()],
                target: "y".into(),
                mean: vec![0.0, 0.0],
                std: vec![1.0, 1.0],
            },
        };
        let ds = sine_windows(30, 6);
        let err = fine_tune(&ck, &ds, &ds, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Incompatible { ref field, .. } if field == "input_features"));
    }
}
