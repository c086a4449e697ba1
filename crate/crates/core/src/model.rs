//! The full forecaster: input projection and position table, transformer
//! encoder, stacked LSTM, a ReLU dense layer and a linear head.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::autodiff::{Tape, Var};
use crate::data::NormalizationParams;
use crate::error::{Error, Result};
use crate::lstm::{stack_forward, StackParams};
use crate::persist::{raw_numbers, write_atomic};
use crate::tensor::Tensor;
use crate::transformer::{
    encoder_forward, glorot, positional_encoding, EncoderLayerParams, EncoderOptions,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_features: usize,
    pub window_len: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    /// Feed-forward inner width; `None` means `4 · d_model`.
    pub d_ff: Option<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub fc_units: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_features: 1,
            window_len: 24,
            horizon: 1,
            d_model: 96,
            n_encoder_layers: 3,
            n_heads: 12,
            d_ff: None,
            lstm_layers: 2,
            lstm_hidden: 128,
            fc_units: 256,
            dropout: 0.5,
            layer_norm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_features", self.input_features),
            ("window_len", self.window_len),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff()),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("fc_units", self.fc_units),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be even for the positional encoding",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("model.layer_norm_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// All learnable weights. Generic over storage like the sub-bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub input_proj_w: T,
    pub input_proj_b: T,
    pub encoder: Vec<EncoderLayerParams<T>>,
    pub lstm: StackParams<T>,
    pub fc_w: T,
    pub fc_b: T,
    pub head_w: T,
    pub head_b: T,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            input_proj_w: f("input_proj.w", &self.input_proj_w),
            input_proj_b: f("input_proj.b", &self.input_proj_b),
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("encoder{i}"), f))
                .collect(),
            lstm: self.lstm.map("lstm", f),
            fc_w: f("fc.w", &self.fc_w),
            fc_b: f("fc.b", &self.fc_b),
            head_w: f("head.w", &self.head_w),
            head_b: f("head.b", &self.head_b),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut T)) {
        f("input_proj.w", &mut self.input_proj_w);
        f("input_proj.b", &mut self.input_proj_b);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder{i}"), f);
        }
        self.lstm.visit_mut("lstm", f);
        f("fc.w", &mut self.fc_w);
        f("fc.b", &mut self.fc_b);
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.map(&mut |n, _| names.push(n.to_string()));
        names
    }
}

impl ModelParams {
    /// Glorot-uniform weights from `cfg.seed`; zero biases except the LSTM
    /// forget gates (`+1`) and unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::init_with(cfg, &mut rng)
    }

    pub fn init_with(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let input_proj_w = glorot(cfg.input_features, d, rng);
        let encoder = (0..cfg.n_encoder_layers)
            .map(|_| EncoderLayerParams::init(d, cfg.n_heads, cfg.d_ff(), rng))
            .collect::<Result<Vec<_>>>()?;
        let lstm = StackParams::init(d, cfg.lstm_hidden, cfg.lstm_layers, rng);
        Ok(ModelParams {
            input_proj_w,
            input_proj_b: Tensor::zeros(&[d]),
            encoder,
            lstm,
            fc_w: glorot(cfg.lstm_hidden, cfg.fc_units, rng),
            fc_b: Tensor::zeros(&[cfg.fc_units]),
            head_w: glorot(cfg.fc_units, cfg.horizon, rng),
            head_b: Tensor::zeros(&[cfg.horizon]),
        })
    }

    pub fn on_tape(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.len());
        n
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Replaces every tensor, in canonical order.
    pub fn set_tensors(&mut self, values: &[Tensor]) {
        let mut it = values.iter();
        self.visit_mut(&mut |_, t| *t = it.next().expect("tensor count").clone());
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.map(&mut |_, t| ok &= t.is_finite());
        ok
    }
}

/// Forward pass on `tape`. `batch_x` is `[B × L × F]`; the result is `[B × H]`.
pub fn forward_on_tape(
    tape: &mut Tape,
    batch_x: &Tensor,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Var> {
    let shape = batch_x.shape();
    let (l, f) = (cfg.window_len, cfg.input_features);
    if shape.len() != 3 || shape[1] != l || shape[2] != f {
        return Err(Error::dim("model forward", shape, &[0, l, f]));
    }
    let batch = shape[0];

    let x = tape.leaf(batch_x.reshape(&[batch * l, f])?);
    let embedded = tape.affine(x, params.input_proj_w, params.input_proj_b)?;
    let pe = positional_encoding(l, cfg.d_model)?.tiled(l, batch)?;
    let pe = tape.leaf(pe);
    let h = tape.add(embedded, pe)?;
    let h = tape.dropout(h, cfg.dropout, rng, training)?;

    let opts = EncoderOptions {
        seq_len: l,
        dropout: cfg.dropout,
        layer_norm_eps: cfg.layer_norm_eps,
        training,
    };
    let encoded = encoder_forward(tape, h, &params.encoder, &opts, rng)?;

    // sample-major (b·L + t) → time-major (t·B + b)
    let time_major = if batch == 1 {
        encoded
    } else {
        let order: Vec<usize> = (0..l)
            .flat_map(|t| (0..batch).map(move |b| b * l + t))
            .collect();
        tape.gather_rows(encoded, &order)?
    };
    let (_, last) = stack_forward(
        tape,
        time_major,
        batch,
        &params.lstm,
        cfg.dropout,
        rng,
        training,
    )?;

    let fc = tape.affine(last.h, params.fc_w, params.fc_b)?;
    let fc = tape.relu(fc);
    tape.affine(fc, params.head_w, params.head_b)
}

/// Forward pass returning plain values.
pub fn forward(
    batch_x: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let pv = params.on_tape(&mut tape);
    let out = forward_on_tape(&mut tape, batch_x, &pv, cfg, rng, training)?;
    Ok(tape.value(out).clone())
}

/// Inference-mode prediction; dropout is inert so no randomness is consumed.
pub fn predict(batch_x: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    forward(
        batch_x,
        params,
        cfg,
        &mut ChaCha8Rng::seed_from_u64(0),
        false,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub normalization: NormalizationParams,
    pub params: ModelParams,
}

#[derive(Serialize)]
struct NormOut<'a> {
    columns: &'a [String],
    target: &'a str,
    mean: Box<RawValue>,
    std: Box<RawValue>,
}

#[derive(Serialize)]
struct TensorOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    data: Box<RawValue>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format_version: u32,
    config: &'a ModelConfig,
    normalization: NormOut<'a>,
    tensors: Vec<TensorOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorIn {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    #[allow(dead_code)]
    format_version: u32,
    config: ModelConfig,
    normalization: NormalizationParams,
    tensors: Vec<TensorIn>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let named = self.params.tensors();
        let out = CheckpointOut {
            format_version: CHECKPOINT_VERSION,
            config: &self.config,
            normalization: NormOut {
                columns: &self.normalization.columns,
                target: &self.normalization.target,
                mean: raw_numbers(&self.normalization.mean),
                std: raw_numbers(&self.normalization.std),
            },
            tensors: named
                .iter()
                .map(|(name, t)| TensorOut {
                    name,
                    shape: t.shape(),
                    data: raw_numbers(t.data()),
                })
                .collect(),
        };
        serde_json::to_string(&out).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let malformed = |message: String| Error::Malformed {
            path: source.to_string(),
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| malformed("missing integer format_version".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: version as u32,
            });
        }
        let raw: CheckpointIn =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        raw.config.validate()?;
        raw.normalization.validate()?;

        let mut by_name: HashMap<String, TensorIn> = HashMap::with_capacity(raw.tensors.len());
        let count = raw.tensors.len();
        for t in raw.tensors {
            if by_name.contains_key(&t.name) {
                return Err(malformed(format!("duplicate tensor {}", t.name)));
            }
            by_name.insert(t.name.clone(), t);
        }
        let mut params = ModelParams::init(&raw.config)?;
        let expected = params.names().len();
        if count != expected {
            return Err(malformed(format!(
                "expected {expected} tensors for the declared config, found {count}"
            )));
        }
        let mut failure = None;
        params.visit_mut(&mut |name, slot| {
            if failure.is_some() {
                return;
            }
            match by_name.remove(name) {
                None => failure = Some(malformed(format!("missing tensor {name}"))),
                Some(t) if t.shape != slot.shape() => {
                    failure = Some(Error::CheckpointShape {
                        name: name.to_string(),
                        expected: slot.shape().to_vec(),
                        found: t.shape,
                    })
                }
                Some(t) => match Tensor::new(t.shape, t.data) {
                    Ok(v) => *slot = v,
                    Err(e) => failure = Some(malformed(format!("tensor {name}: {e}"))),
                },
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(Checkpoint {
            config: raw.config,
            normalization: raw.normalization,
            params,
        })
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_features: 2,
            window_len: 4,
            horizon: 2,
            d_model: 8,
            n_encoder_layers: 1,
            n_heads: 2,
            d_ff: None,
            lstm_layers: 2,
            lstm_hidden: 4,
            fc_units: 4,
            dropout: 0.5,
            layer_norm_eps: 1e-5,
            seed: 7,
        }
    }

    fn norm() -> NormalizationParams {
        NormalizationParams {
            columns: vec!["load".into(), "temp".into()],
            target: "load".into(),
            mean: vec![100.0, 0.1],
            std: vec![3.0, 1.0 / 3.0],
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny();
        cfg.n_heads = 3;
        assert!(matches!(ModelParams::init(&cfg), Err(Error::Config(m)) if m.contains("n_heads")));
        let mut cfg = tiny();
        cfg.dropout = 1.0;
        assert!(ModelParams::init(&cfg).is_err());
        let mut cfg = tiny();
        cfg.fc_units = 0;
        assert!(matches!(ModelParams::init(&cfg), Err(Error::Config(m)) if m.contains("fc_units")));
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelParams::init(&tiny()).unwrap();
        let b = ModelParams::init(&tiny()).unwrap();
        assert_eq!(a, b);
        for (name, t) in a.tensors() {
            if t.shape().len() == 2 {
                let bound = (6.0 / (t.shape()[0] + t.shape()[1]) as f64).sqrt();
                assert!(t.max_abs() <= bound, "{name}");
            }
        }
        assert!(a.lstm.layers[1].b_f.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_shape_and_batch_independence() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[3, 4, 2], 1.0, &mut rng);
        let y = predict(&x, &p, &cfg).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        for b in 0..3 {
            let xb = Tensor::new(vec![1, 4, 2], x.data()[b * 8..(b + 1) * 8].to_vec()).unwrap();
            let yb = predict(&xb, &p, &cfg).unwrap();
            for (u, v) in yb.data().iter().zip(y.row(b)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert_eq!(y, predict(&x, &p, &cfg).unwrap());
        assert!(predict(&Tensor::zeros(&[1, 3, 2]), &p, &cfg).is_err());
    }

    #[test]
    fn dropout_rate_does_not_affect_inference() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg).unwrap();
        let x = Tensor::uniform(&[2, 4, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let mut other = cfg.clone();
        other.dropout = 0.1;
        assert_eq!(
            predict(&x, &p, &cfg).unwrap(),
            predict(&x, &p, &other).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny();
        let ck = Checkpoint {
            config: cfg.clone(),
            normalization: norm(),
            params: ModelParams::init(&cfg).unwrap(),
        };
        let back = Checkpoint::from_json(&ck.to_json(), "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn checkpoint_error_categories() {
        let cfg = tiny();
        let ck = Checkpoint {
            config: cfg.clone(),
            normalization: norm(),
            params: ModelParams::init(&cfg).unwrap(),
        };
        let json = ck.to_json();
        let truncated = &json[..json.len() / 2];
        assert!(matches!(
            Checkpoint::from_json(truncated, "t"),
            Err(Error::Malformed { .. })
        ));
        let bumped = json.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(matches!(
            Checkpoint::from_json(&bumped, "v"),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));
        let reshaped = json.replacen(
            "\"name\":\"fc.b\",\"shape\":[4]",
            "\"name\":\"fc.b\",\"shape\":[2,2]",
            1,
        );
        assert!(matches!(
            Checkpoint::from_json(&reshaped, "s"),
            Err(Error::CheckpointShape { .. })
        ));
    }
}
