//! Run configuration file (JSON, strict schema).

use std::path::{Path, PathBuf};

use loadcast::data::{PrepOptions, DEFAULT_SPLIT};
use loadcast::model::ModelConfig;
use loadcast::pso::{PsoConfig, SearchSpace};
use loadcast::train::TrainConfig;
use loadcast::tune::default_space;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: PathBuf,
    pub target: String,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "one")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_missing")]
    pub max_missing_fraction: f64,
    #[serde(default)]
    pub allow_excess_missing: bool,
    #[serde(default = "default_iqr_k")]
    pub iqr_k: f64,
    /// Load a dataset written by `preprocess` instead of re-reading the CSV.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_window() -> usize {
    24
}
fn one() -> usize {
    1
}
fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}
fn default_missing() -> f64 {
    0.03
}
fn default_iqr_k() -> f64 {
    1.5
}

impl DataSection {
    pub fn prep_options(&self) -> PrepOptions {
        PrepOptions {
            split: self.split,
            max_missing_fraction: self.max_missing_fraction,
            allow_excess_missing: self.allow_excess_missing,
            iqr_k: self.iqr_k,
        }
    }
}

/// Architecture settings; input width, window and horizon come from the data section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    pub d_ff: Option<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub fc_units: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            d_model: m.d_model,
            n_encoder_layers: m.n_encoder_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            lstm_layers: m.lstm_layers,
            lstm_hidden: m.lstm_hidden,
            fc_units: m.fc_units,
            dropout: m.dropout,
            layer_norm_eps: m.layer_norm_eps,
            seed: m.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoSection {
    pub n_particles: usize,
    pub t_max: usize,
    pub c1: f64,
    pub c2: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub v_max: f64,
    pub seed: u64,
    pub budget_epochs: usize,
    pub space: SearchSpace,
}

impl Default for PsoSection {
    fn default() -> Self {
        let p = PsoConfig::default();
        PsoSection {
            n_particles: p.n_particles,
            t_max: p.t_max,
            c1: p.c1,
            c2: p.c2,
            w_max: p.w_max,
            w_min: p.w_min,
            v_max: p.v_max,
            seed: p.seed,
            budget_epochs: 20,
            space: default_space(),
        }
    }
}

impl PsoSection {
    pub fn pso_config(&self) -> PsoConfig {
        PsoConfig {
            n_particles: self.n_particles,
            t_max: self.t_max,
            c1: self.c1,
            c2: self.c2,
            w_max: self.w_max,
            w_min: self.w_min,
            v_max: self.v_max,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pso: PsoSection,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.csv);
        if let Some(c) = cfg.data.cache.as_mut() {
            resolve(c);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.pso.seed = seed;
    }

    pub fn model_config(&self, input_features: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_features,
            window_len: self.data.window,
            horizon: self.data.horizon,
            d_model: m.d_model,
            n_encoder_layers: m.n_encoder_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            lstm_layers: m.lstm_layers,
            lstm_hidden: m.lstm_hidden,
            fc_units: m.fc_units,
            dropout: m.dropout,
            layer_norm_eps: m.layer_norm_eps,
            seed: m.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if d.window == 0 || d.horizon == 0 || d.stride == 0 {
            return Err(CliError::user(
                "data.window, data.horizon and data.stride must be >= 1",
            ));
        }
        if d.target.is_empty() {
            return Err(CliError::user("data.target must name a column"));
        }
        self.model_config(1).validate()?;
        self.train.validate()?;
        self.pso.pso_config().validate()?;
        loadcast::tune::validate_space(&self.pso.space)?;
        if self.pso.budget_epochs == 0 {
            return Err(CliError::user("pso.budget_epochs must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_values() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"data": {"csv": "x.csv", "target": "load"}}"#).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.max_epochs, 500);
        assert_eq!(cfg.model.dropout, 0.5);
        assert_eq!(cfg.model.n_encoder_layers, 3);
        assert_eq!(cfg.model.n_heads, 12);
        assert_eq!(cfg.model.lstm_hidden, 128);
        assert_eq!(cfg.model.fc_units, 256);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"data": {"csv": "x.csv", "target": "load"}, "modle": {}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
        let bad = r#"{"data": {"csv": "x.csv", "target": "load"}, "train": {"lr": 0.1}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
    }
}
